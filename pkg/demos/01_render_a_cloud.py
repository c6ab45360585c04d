"""Render color, temperature and depth from one shared Gaussian cloud.

Builds a small hot-sphere-in-a-box scene, renders a ring camera's view of it,
and writes the RGB image, a colormapped thermal preview and both depth maps to
demos/output/01/. The same cloud feeds both blending passes; only the opacity
channel and the per-Gaussian value differ between them.
"""

import os

import numpy as np

from thermosplat.formats import save_png, save_thermal_preview
from thermosplat.heat import build_knn
from thermosplat.pipeline import ModelConfig, init_model_params, render_arrays
from thermosplat.scenes import CameraRig, SceneSpec, generate_scene

out_dir = os.path.join(os.path.dirname(__file__), "output", "01")
os.makedirs(out_dir, exist_ok=True)

spec = SceneSpec(count=220, cameras=CameraRig(n_views=4, width=96, height=96))
cloud, views, meta = generate_scene(spec)
print(f"scene: {cloud.count} gaussians, temperatures "
      f"{meta['t_min']}..{meta['t_max']} C")

cfg = ModelConfig()
model = init_model_params(np.random.default_rng(0), cfg, dtype=np.float64)
graph = build_knn(cloud.mu, cfg.knn_k)

view = views[0]
render = render_arrays(cloud, model, view, cfg, graph)

save_png(os.path.join(out_dir, "rgb.png"), np.clip(render.i_c, 0, 1))
save_thermal_preview(os.path.join(out_dir, "thermal.png"), np.clip(render.i_t, 0, 1))
for name, depth in (("depth_rgb.png", render.d_c), ("depth_thermal.png", render.d_t)):
    lo, hi = depth.min(), depth.max()
    save_png(os.path.join(out_dir, name), (depth - lo) / max(hi - lo, 1e-9))

print(f"rendered {view.width}x{view.height}; RGB coverage "
      f"{render.acc_c.mean():.3f}, thermal coverage {render.acc_t.mean():.3f}")
print(f"depth spans {render.d_c.min():.2f}..{render.d_c.max():.2f} world units")
print(f"wrote images to {out_dir}")
