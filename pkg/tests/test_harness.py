import math

import numpy as np
import pytest

from anticopy import harness as h
from anticopy.channel import IDENTITY, LQR2_CHANNEL, preset
from anticopy.detect import DetectorKind

SMALL_LCAC = h.LcacDesign(
    rows=31, cols=31, module_px=8, ecc_block=200, ecc_payload=40, ecc_blocks=1, auth_block=12, auth_payload=4
)


class TestMetrics:
    def test_ps_example(self):
        assert round(h.ps_metric(17, 26), 4) == 0.6538

    @pytest.mark.parametrize("acc, tot", [(0, 0), (-1, 3), (4, 3)])
    def test_ps_errors(self, acc, tot):
        with pytest.raises(ValueError):
            h.ps_metric(acc, tot)

    def test_pr_examples(self):
        assert h.pr_metric([1, 2, 9], [1, 2, 3]) == pytest.approx(2 / 3)
        assert h.pr_metric([], [5]) == 0.0
        with pytest.raises(ValueError):
            h.pr_metric([1], [])

    def test_report_counts(self):
        recs = [
            h.TrialRecord(0, 1, "2lqr", "ppd", 0.9, True),
            h.TrialRecord(1, 2, "2lqr", "ppd", math.nan, False, status="recovery-failure"),
            h.TrialRecord(2, 3, "2lqr", "ppd", math.nan, False, status="excluded: RuntimeError: x"),
        ]
        rep = h.MetricsReport("x", "2lqr", "ppd", recs)
        # recovery failures count as rejections, exclusions leave the denominator
        assert rep.ps == 0.5 and rep.failures == 1 and rep.exclusions == 1 and rep.pr is None

    def test_csv(self):
        recs = [h.TrialRecord(0, 7, "lcac", "lcac-scp", 0.25, True, 0.5)]
        text = h.MetricsReport("x", "lcac", "lcac-scp", recs).to_csv()
        assert text == "trial,seed,family,attack,score,accept,pr\n0,7,lcac,lcac-scp,0.25,1,0.5\n"

    def test_table_golden(self):
        a = h.MetricsReport("2lqr/ppd", "2lqr", "ppd", [h.TrialRecord(0, 1, "2lqr", "ppd", 0.9, True)] * 3)
        b = h.MetricsReport(
            "lcac/lcac-scp",
            "lcac",
            "lcac-scp",
            [h.TrialRecord(0, 1, "lcac", "lcac-scp", 0.1, True, 1.0), h.TrialRecord(1, 2, "lcac", "lcac-scp", 9, False, 0.5)],
        )
        expected = (
            "experiment     family  attack    trials      ps      pr  failures  excluded\n"
            "-------------  ------  --------  ------  ------  ------  --------  --------\n"
            "2lqr/ppd       2lqr    ppd            3  1.0000       -         0         0\n"
            "lcac/lcac-scp  lcac    lcac-scp       2  0.5000  0.7500         0         0\n"
        )
        assert h.table_report([a, b]) == expected


class TestConfig:
    def test_defaults(self):
        cfg = h.ExperimentConfig("lcac")
        assert cfg.pass1 == preset("lcac") and cfg.pass2 == preset("lcac") and cfg.name == "lcac/none"

    @pytest.mark.parametrize(
        "kw", [dict(family="qr"), dict(family="2lqr", attack="lcac-scp"), dict(family="lcac", attack="ppd"),
               dict(family="2lqr", trials=0), dict(family="2lqr", synthetic_captures=1)]
    )
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            h.ExperimentConfig(**kw)

    def test_from_mapping(self):
        cfg = h.ExperimentConfig.from_mapping(
            {"family": "2lqr", "attack": "upd", "lqr2.L_m": 1000, "channel2": "lcac",
             "channel2.noise_sigma": 20, "upd_candidates": "6,12", "trials": 5}
        )
        assert cfg.lqr2.L_m == 1000 and cfg.trials == 5 and cfg.upd_candidates == (6, 12)
        assert cfg.channel1 is None
        assert cfg.pass2.noise.sigma == 20 and cfg.pass2.contrast == preset("lcac").contrast

    @pytest.mark.parametrize("values", [{"attack": "none"}, {"family": "2lqr", "bogus": 1}, {"family": "2lqr", "lqr2.nope": 1}])
    def test_from_mapping_errors(self, values):
        with pytest.raises(KeyError):
            h.ExperimentConfig.from_mapping(values)

    def test_channel_from(self):
        c = h.channel_from(LQR2_CHANNEL, {"noise_gamma": 1.0, "blur_sigma": 0.0})
        assert c.noise.gamma == 1.0 and c.noise.sigma == LQR2_CHANNEL.noise.sigma and c.blur_sigma == 0.0


class TestRuns:
    @pytest.mark.parametrize("attack", ["none", "direct"])
    def test_identity_2lqr(self, attack):
        rep = h.run_experiment(h.ExperimentConfig("2lqr", attack, trials=3, channel1=IDENTITY, channel2=IDENTITY))
        assert rep.ps == 1.0 and len(rep.records) == 3

    @pytest.mark.parametrize("attack", ["none", "direct"])
    def test_identity_lcac(self, attack):
        cfg = h.ExperimentConfig("lcac", attack, trials=3, channel1=IDENTITY, channel2=IDENTITY, lcac=SMALL_LCAC)
        assert h.run_experiment(cfg).ps == 1.0

    def test_identity_ppd_forges(self):
        rep = h.run_experiment(h.ExperimentConfig("2lqr", "ppd", trials=3, channel1=IDENTITY, channel2=IDENTITY))
        assert rep.ps == 1.0

    def test_deterministic(self):
        cfg = h.ExperimentConfig("2lqr", "synthetic", trials=4, seed=11)
        assert h.run_experiment(cfg).to_csv() == h.run_experiment(cfg).to_csv()

    def test_seed_changes_results(self):
        a = h.run_experiment(h.ExperimentConfig("2lqr", "none", trials=3, seed=1))
        b = h.run_experiment(h.ExperimentConfig("2lqr", "none", trials=3, seed=2))
        assert [r.score for r in a.records] != [r.score for r in b.records]

    def test_lcac_scp_reports_recall(self):
        cfg = h.ExperimentConfig("lcac", "lcac-scp", trials=2, lcac=SMALL_LCAC)
        rep = h.run_experiment(cfg)
        assert rep.pr is not None and 0.0 <= rep.pr <= 1.0

    def test_direct_monotone_in_noise(self):
        ps = []
        for sigma in (5, 9, 11, 13):
            c = h.channel_from(LQR2_CHANNEL, {"noise_sigma": sigma})
            ps.append(h.run_experiment(h.ExperimentConfig("2lqr", "direct", trials=30, channel1=c, channel2=c)).ps)
        assert all(a >= b for a, b in zip(ps, ps[1:])) and ps[0] > ps[-1]

    def test_unreadable_attacker_capture_is_failure(self):
        c = h.channel_from(IDENTITY, {"noise_sigma": 1000.0})
        rep = h.run_experiment(h.ExperimentConfig("2lqr", "ppd", trials=2, channel1=c))
        assert rep.failures == 2 and rep.ps == 0.0


def test_detection_trials_smoke():
    out = h.detection_trials("2lqr", hidden=True, trials=2, m_s=100, seed=3)
    assert len(out) == 2 and set(out[0]) == set(DetectorKind)
    with pytest.raises(ValueError):
        h.detection_trials("qr", hidden=False, trials=1)
