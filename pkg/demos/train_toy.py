"""Overfit the full detector on ten synthetic scenes.

Runs the desk-scale preset twice, with and without the basis similarity
term, and compares how far apart the learned bases end up.  Takes about a
minute and a half.
"""
from pillarkit.config import toy_config
from pillarkit.train import train_toy

cfg = toy_config()
print(cfg.serialize())


def show(step, parts):
    if step == 1 or step % 50 == 0:
        print(f"step {step:3d}  total {parts.total:9.4f}  loc {parts.loc:8.4f}  cls {parts.cls:7.4f}  "
              f"dir {parts.dir:7.4f}  sim {parts.sim:.4f}  positives {parts.num_positive}")


with_sim = train_toy(cfg, progress=show)
print(f"final / initial loss: {with_sim.final_loss / with_sim.initial_loss:.4f}")

cfg0 = toy_config().set("sim_weight", "0")
without = train_toy(cfg0)
print(f"mean |cos| between bases: start {with_sim.cosine_start:.4f}, "
      f"with similarity loss {with_sim.cosine_end:.4f}, without {without.cosine_end:.4f}")
