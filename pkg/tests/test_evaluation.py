import gzip
import json

import numpy as np
import pytest

from statebench.bandits import LINGREEDY, LINUCB, Policy, init_arms
from statebench.config import Config, build_experiment
from statebench.embeddings import ALS, EmbeddingSpace
from statebench.evaluation import (WindowMetrics, advance_histories, ndcg_at_k,
                                   read_windows_csv, run_experiment,
                                   run_window, tune_bandit, write_events_csv,
                                   write_windows_csv)
from statebench.state import ITEM_MEAN, USER, StateSpec

from conftest import make_log


class TestNdcg:
    def test_analytic_values(self):
        assert ndcg_at_k(1, 20) == 1.0
        assert ndcg_at_k(3, 20) == pytest.approx(0.5)
        assert ndcg_at_k(None, 20) == 0.0
        assert ndcg_at_k(4, 20) == pytest.approx(1 / np.log2(5))
        assert ndcg_at_k(20, 20) == pytest.approx(1 / np.log2(21))

    def test_bounds_and_errors(self):
        with pytest.raises(ValueError):
            ndcg_at_k(1, 0)
        with pytest.raises(ValueError):
            ndcg_at_k(0, 20)
        with pytest.raises(ValueError):
            ndcg_at_k(21, 20)
        for r in range(1, 21):
            assert 0.0 < ndcg_at_k(r, 20) <= 1.0


def one_dim_setup():
    """Two arms over a 1-d user state; arm 0 pre-trained to theta=2/3."""
    space = EmbeddingSpace(np.array([[1.0]]), np.array([[1.0], [1.0]]), 1, ALS)
    spec = StateSpec(USER, 1)
    arms = init_arms([0, 1], 1, 1.0)
    arms.update_at(0, np.array([1.0]), 1.0)
    arms.update_at(0, np.array([1.0]), 1.0)
    return space, spec, arms


class TestRunWindow:
    def test_two_arm_arithmetic(self):
        space, spec, arms = one_dim_setup()
        window = make_log([0, 0], [1, 0], n_users=1, n_items=2)
        wm = run_window(window, Policy(LINGREEDY, epsilon=0.0), arms, spec,
                        space, {}, k=20)
        # truth ranks: item 1 scores 0 vs 2/3 -> rank 2; then item 0 is the
        # only unconsumed arm -> rank 1
        assert wm.events == 2
        assert wm.ndcg_mean == pytest.approx((1 / np.log2(3) + 1.0) / 2)
        assert wm.ndcg_cumulative == pytest.approx(wm.ndcg_mean)
        assert arms.total_updates() == 4

    def test_exclude_seen_controls_repeat_consumption(self):
        space, spec, arms = one_dim_setup()
        window = make_log([0, 0], [1, 1], n_users=1, n_items=2)
        wm = run_window(window, Policy(LINGREEDY, epsilon=0.0), arms, spec,
                        space, {}, k=20)
        # second consumption of item 1 is excluded -> miss
        assert wm.ndcg_mean == pytest.approx((1 / np.log2(3) + 0.0) / 2)

        space, spec, arms = one_dim_setup()
        wm = run_window(window, Policy(LINGREEDY, epsilon=0.0), arms, spec,
                        space, {}, k=20, exclude_seen=False)
        # after the first event arm 1 has theta=1/2 < 2/3 -> rank 2 again
        assert wm.ndcg_mean == pytest.approx(1 / np.log2(3))

    def test_empty_window_carries_cumulative(self):
        space, spec, arms = one_dim_setup()
        empty = make_log([], [], n_users=1, n_items=2)
        wm = run_window(empty, Policy(LINUCB), arms, spec, space, {},
                        window_index=3, prior_events=10, prior_ndcg_sum=5.0)
        assert wm.events == 0
        assert wm.ndcg_mean == 0.0
        assert wm.ndcg_cumulative == pytest.approx(0.5)

    def test_cold_item_is_an_error_naming_the_event(self):
        space, spec, arms = one_dim_setup()
        window = make_log([0], [1], n_users=1, n_items=3)
        bare = init_arms([0], 1, 1.0)
        with pytest.raises(KeyError, match="window 2 event 0.*cold"):
            run_window(window, Policy(LINUCB), bare, spec, space, {},
                       window_index=2)

    def test_neg_samples_add_zero_reward_updates(self):
        space, spec, arms = one_dim_setup()
        window = make_log([0, 0], [1, 0], n_users=1, n_items=2)
        before = arms.total_updates()
        run_window(window, Policy(LINGREEDY, epsilon=0.0), arms, spec, space,
                   {}, rng=np.random.default_rng(0), neg_samples=3)
        assert arms.total_updates() - before == 2 * (1 + 3)

    def test_event_sink_rows(self):
        space, spec, arms = one_dim_setup()
        window = make_log([0, 0], [1, 0], n_users=1, n_items=2)
        sink = []
        run_window(window, Policy(LINGREEDY, epsilon=0.0), arms, spec, space,
                   {}, k=20, prior_events=7, event_sink=sink)
        assert [r[0] for r in sink] == [7, 8]
        assert sink[0][1:4] == (0, 1, 2)
        assert sink[0][4] == pytest.approx(1 / np.log2(3))


class TestCausality:
    def test_prefix_contexts_independent_of_future(self, tiny_space):
        spec = StateSpec(ITEM_MEAN, tiny_space.d)
        pol = Policy(LINUCB, alpha=0.5)

        def contexts(users, items):
            window = make_log(users, items, n_users=5, n_items=tiny_space.n_items)
            arms = init_arms(range(10), spec.dim(), 1.0)
            seen = []
            run_window(window, pol, arms, spec, tiny_space, {},
                       rng=np.random.default_rng(0),
                       context_probe=lambda u, x: seen.append((u, x.copy())))
            return seen

        a = contexts([0, 0, 1, 0, 2], [1, 2, 3, 4, 5])
        b = contexts([0, 0, 1, 3, 1], [1, 2, 3, 7, 8])
        for (ua, xa), (ub, xb) in zip(a[:3], b[:3]):
            assert ua == ub
            assert np.array_equal(xa, xb)

    def test_user_state_static_across_events(self, tiny_space):
        spec = StateSpec(USER, tiny_space.d)
        window = make_log([0, 1, 0, 1, 0], [1, 2, 3, 4, 5],
                          n_users=2, n_items=tiny_space.n_items)
        arms = init_arms(range(10), spec.dim(), 1.0)
        seen: dict[int, set] = {}
        run_window(window, Policy(LINUCB), arms, spec, tiny_space, {},
                   context_probe=lambda u, x: seen.setdefault(u, set()).add(x.tobytes()))
        assert all(len(v) == 1 for v in seen.values())


class TestCsvArtifacts:
    def test_windows_roundtrip(self, tmp_path):
        metrics = [WindowMetrics(1, 10, 0.5, 0.5), WindowMetrics(2, 0, 0.0, 0.5)]
        stamp = {"mf.seed": "0", "bandit.seed": "1"}
        path = tmp_path / "windows.csv"
        write_windows_csv(path, stamp, metrics)
        back_stamp, back = read_windows_csv(path)
        assert back_stamp == stamp
        assert back == metrics

    def test_events_bytes_deterministic_and_parsable(self, tmp_path):
        rows = [(0, 1, 2, 3, 0.5), (1, 4, 5, None, 0.0)]
        stamp = {"a": "1"}
        p1, p2 = tmp_path / "a.gz", tmp_path / "b.gz"
        write_events_csv(p1, stamp, rows)
        write_events_csv(p2, stamp, rows)
        assert p1.read_bytes() == p2.read_bytes()
        text = gzip.decompress(p1.read_bytes()).decode()
        assert "# a = 1" in text
        assert "1,4,5,,0.0" in text  # missed rank stays empty


def tiny_config(tiny_csv, out_dir, **extra):
    values = {
        "data.path": str(tiny_csv), "data.name": "tiny",
        "mf.model": "als", "mf.d": "4", "mf.epochs": "3", "mf.reg": "0.01",
        "state.kind": "item_mean", "bandit.policy": "linucb",
        "eval.n_windows": "4", "out.dir": str(out_dir),
    }
    values.update({k: str(v) for k, v in extra.items()})
    return build_experiment(Config(values))


class TestRunExperiment:
    def test_artifacts_and_bookkeeping(self, tiny_csv, tmp_path):
        cfg = tiny_config(tiny_csv, tmp_path / "out")
        summary = run_experiment(cfg)
        run_dir = tmp_path / "out" / "tiny" / "als-item_mean-linucb"
        assert (run_dir / "windows.csv").exists()
        assert (run_dir / "events.csv.gz").exists()
        assert (tmp_path / "out" / "summary.csv").exists()

        stamp, metrics = read_windows_csv(run_dir / "windows.csv")
        assert stamp["mf.seed"] == "0" and stamp["bandit.seed"] == "0"
        assert len(metrics) == 4
        assert summary.final_ndcg == metrics[-1].ndcg_cumulative
        for m in metrics:
            assert 0.0 <= m.ndcg_mean <= 1.0

        meta = json.loads((run_dir / "run_meta.json").read_text())
        assert meta["online_updates"] == summary.events
        assert meta["config"]["bandit.seed"] == "0"

    def test_cumulative_recomputable_from_windows(self, tiny_csv, tmp_path):
        cfg = tiny_config(tiny_csv, tmp_path / "out")
        summary = run_experiment(cfg)
        done, total = 0, 0.0
        for m in summary.windows:
            done += m.events
            total += m.events * m.ndcg_mean
            assert m.ndcg_cumulative == pytest.approx(total / done)

    def test_window_means_recomputable_from_event_log(self, tiny_csv, tmp_path):
        cfg = tiny_config(tiny_csv, tmp_path / "out")
        summary = run_experiment(cfg)
        raw = gzip.decompress(
            (tmp_path / "out" / "tiny" / "als-item_mean-linucb" / "events.csv.gz").read_bytes()
        ).decode().splitlines()
        vals = [float(line.split(",")[4]) for line in raw
                if line and not line.startswith(("#", "event"))]
        start = 0
        for m in summary.windows:
            chunk = vals[start:start + m.events]
            start += m.events
            assert np.mean(chunk) == pytest.approx(m.ndcg_mean)
            assert all(0.0 <= v <= 1.0 for v in chunk)
        assert start == len(vals)

    def test_reruns_are_byte_identical(self, tiny_csv, tmp_path):
        run_dir = tmp_path / "out" / "tiny" / "als-item_mean-linucb"
        run_experiment(tiny_config(tiny_csv, tmp_path / "out"))
        first = {f: (run_dir / f).read_bytes() for f in ("windows.csv", "events.csv.gz")}
        run_experiment(tiny_config(tiny_csv, tmp_path / "out"))
        for f, blob in first.items():
            assert (run_dir / f).read_bytes() == blob

    def test_single_window_cumulative_equals_mean(self, tiny_csv, tmp_path):
        cfg = tiny_config(tiny_csv, tmp_path / "out", **{"eval.n_windows": 1})
        summary = run_experiment(cfg)
        assert len(summary.windows) == 1
        assert summary.windows[0].ndcg_cumulative == summary.windows[0].ndcg_mean

    def test_stage_failures_are_labeled(self, tmp_path):
        bad = tmp_path / "three.csv"
        bad.write_text("user_id,item_id,rating,timestamp\n"
                       "u,i,1,1\nu,j,1,2\nv,i,1,3\n")
        cfg = tiny_config(bad, tmp_path / "out")
        with pytest.raises(RuntimeError, match="stage split"):
            run_experiment(cfg)


class TestTuneBandit:
    def test_grid_shape_and_choice(self, tiny_split, tiny_space):
        policy, spec, report = tune_bandit(
            tiny_space, tiny_split.warm_train, tiny_split.warm_valid,
            "item_concat", "lingreedy", seed=0,
            param_values=(0.05, 0.2), h_values=(2, 3))
        assert len(report) == 4
        assert {r["h"] for r in report} == {2, 3}
        assert policy.kind == "lingreedy"
        assert policy.epsilon in (0.05, 0.2)
        assert spec.h in (2, 3)
        top = max(r["valid_ndcg"] for r in report)
        first = next(r for r in report if r["valid_ndcg"] == top)
        assert (policy.epsilon, spec.h) == (first["epsilon"], first["h"])

    def test_static_states_skip_h_grid(self, tiny_split, tiny_space):
        _, spec, report = tune_bandit(
            tiny_space, tiny_split.warm_train, tiny_split.warm_valid,
            "user", "linucb", seed=0, param_values=(0.1, 1.0))
        assert len(report) == 2
        assert all(r["h"] == 5 for r in report)
        assert spec.h == 5
