"""Smoke test for the retention_flow extension module."""

import math
import tempfile
from pathlib import Path

import retention_flow as rf


def main() -> None:
    assert rf.reward_integrate(0.5, [0.2, 0.3], 0.0) == 0.5
    assert abs(rf.reward_integrate(0.5, [0.2, 0.3], 1.0) - 0.5 * math.exp(0.5)) < 1e-12
    assert rf.action_to_slate([1.0, 0.0], [[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]], 2) == [1, 2]

    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp)
        cfg = rf.RunConfig(
            "env.users = 20\nenv.items = 60\ntrain.steps = 20\ntrain.batch_size = 16\n"
            "train.min_fill = 16\nrun.eval_interval = 10\n"
            f"run.out = {out}\n"
        )
        assert cfg.steps == 20 and cfg.policy == "gfn"
        assert "train.batch_size = 16" in cfg.resolved()

        world = rf.World(cfg)
        features = world.reset(0)
        assert len(features) == 8
        items = world.items()
        left, steps = False, 0
        while not left:
            slate = rf.action_to_slate(world.user_latent(0), items, world.slate_size)
            feedback, reward, left = world.step(slate)
            assert len(feedback) == 3 and reward >= 0.0
            steps += 1
        day, retention = world.end_session()
        assert 1 <= day <= 10 and retention == 1.0 / day

        result = rf.train(cfg)
        assert len(result["losses"]) == 20
        assert all(math.isfinite(x) for x in result["losses"])

        policy = rf.Policy(cfg, out / "checkpoint.txt")
        metrics = policy.evaluate(50)
        assert 0.0 <= metrics["retention"] <= 1.0
        again = rf.evaluate(cfg, out / "checkpoint.txt", 50)
        assert again == metrics

        random_metrics = rf.Policy(cfg.with_value("run.policy", "random")).evaluate(50)
        assert 1.0 <= random_metrics["return_time"] <= 10.0

        tv, passed = rf.sanity(depth=1, branching=2, steps=500)
        assert passed, tv

        log = out / "log.csv"
        log.write_text("user_id,item_id,click,like\n1,1,1,0\n1,2,0,1\n2,3,1,0\n2,4,0,0\n")
        fits = rf.calibrate(log, out / "calib.cfg")
        assert [f[0] for f in fits] == ["click", "like"]
        calibrated = rf.RunConfig((out / "calib.cfg").read_text())
        assert "calib.omega.like = 1.0" in calibrated.resolved()

        try:
            rf.RunConfig("train.batch_size = yes\n")
        except ValueError as err:
            assert "line 1" in str(err)
        else:
            raise AssertionError("bad config accepted")

    print(f"smoke test passed ({steps} simulator steps, train metrics {result['metrics']})")


if __name__ == "__main__":
    main()
