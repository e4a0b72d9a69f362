from hyperadapt import AdaptationModule, Generator, SynthesisConfig
from hyperadapt.params import analytic_report, measured_report, scaling_table


def test_analytic_equals_measured():
    for cfg, n in ((SynthesisConfig(), 4), (SynthesisConfig(z_dim=8, w_dim=8, channels=(8, 4)), 3)):
        G = Generator(cfg)
        a = AdaptationModule(n, G.layer_shapes(), latent_dim=64)
        assert measured_report(G, a) == analytic_report(cfg, n, 64)


def test_default_totals():
    rep = analytic_report()
    assert rep.generator == 177715
    assert rep.adaptation == 69350
    assert rep.total == 247065
    assert rep.separate_models == 4 * 177715
    text = rep.format()
    assert "conditional total:     247065" in text and "frozen generator:      177715" in text


def test_scaling_law():
    rows = scaling_table(domain_counts=(1, 2, 5, 10))
    gen = rows[0]["generator"]
    for r in rows:
        assert r["measured_conditional"] == r["conditional"]
        assert r["measured_separate"] == r["separate"] == r["n_domains"] * gen
    for a, b in zip(rows, rows[1:]):
        dn = b["n_domains"] - a["n_domains"]
        assert b["separate"] - a["separate"] == dn * gen
        assert b["conditional"] - a["conditional"] == dn * 64


def test_scaling_without_measurement():
    rows = scaling_table(domain_counts=(3,), measure=False)
    assert "measured_conditional" not in rows[0]
