import numpy as np, time, json
from kbuf import *
from kbuf.trainer import create_state, fit, evaluate
from kbuf.scene import add_point_noise

t0 = time.time()
cloud, views = make_synthetic_scene("textured-sphere", 2200, 8, 64, seed=7)
noisy = add_point_noise(cloud, sigma=2*views.tau, dropout=0.0, seed=1)
out = {}
for K in (1, 4):
    cfg = TrainConfig(k=K, c=8, steps=3000, seed=0)
    st = create_state(cfg, noisy, views)
    fit(st)
    rows = evaluate(st, "test")
    tr = evaluate(st, "train")
    out[K] = dict(test=float(np.mean([r["psnr"] for r in rows])),
                  train=float(np.mean([r["psnr"] for r in tr])),
                  elapsed=time.time()-t0)
    print(f"K={K}: test {out[K]['test']:.2f} dB, train {out[K]['train']:.2f} dB, t={out[K]['elapsed']:.0f}s", flush=True)
print(json.dumps(out))
