import numpy as np
import pytest
from numpy.testing import assert_allclose

from plaus.errors import ParameterError
from plaus.sim import (
    HighDimScenario,
    PedigreeScenario,
    carriers_only,
    get_scenario,
    highdim_beta,
    run_replications,
    simulate_highdim,
    simulate_pedigree,
)


class TestPedigreeGenerator:
    def test_returns_exact_nonfounder_count(self):
        ds = simulate_pedigree(PedigreeScenario(seed=0))
        assert ds.n == 8
        assert set(np.asarray(ds.meta["family"])) == {"f1", "f2"}

    def test_silent_model_gives_all_zeros(self):
        ds = simulate_pedigree(PedigreeScenario(intercept=-15.0, seed=1))
        assert (ds.y == 0).all()

    def test_seed_determinism(self):
        a = simulate_pedigree(PedigreeScenario(seed=5))
        b = simulate_pedigree(PedigreeScenario(seed=5))
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.meta["poo"], b.meta["poo"])

    def test_segregating_mode_marks_noncarriers(self):
        found_noncarrier = False
        for seed in range(12):
            ds = simulate_pedigree(
                PedigreeScenario(seed=seed, carrier_mode="segregating")
            )
            carrier = np.asarray(ds.meta["carrier"])
            # at least one carrier per family by construction
            fid = np.asarray(ds.meta["family"])
            for f in np.unique(fid):
                assert carrier[fid == f].sum() >= 1
            assert (ds.y[carrier == 0] == 0).all()
            found_noncarrier |= (carrier == 0).any()
        assert found_noncarrier

    def test_poo_defined_for_every_carrier(self):
        for seed in range(10):
            ds = simulate_pedigree(
                PedigreeScenario(seed=seed, carrier_mode="segregating",
                                 poo_effect=1.0)
            )
            poo = np.asarray(ds.meta["poo"])
            carrier = np.asarray(ds.meta["carrier"])
            assert set(np.unique(poo[carrier == 1])) <= {0, 1}
            assert (poo[carrier == 0] == 0).all()

    def test_outcomes_respect_family_effects(self):
        # A huge negative second-family effect silences that family.
        sc = PedigreeScenario(n_total=400, family_effects=(0.0, -15.0),
                              intercept=2.0, seed=3)
        ds = simulate_pedigree(sc)
        fid = np.asarray(ds.meta["family"])
        assert (ds.y[fid == "f2"] == 0).all()
        assert ds.y[fid == "f1"].mean() > 1.5

    def test_carriers_subset(self):
        ds = simulate_pedigree(PedigreeScenario(seed=2,
                                                carrier_mode="segregating"))
        sub = carriers_only(ds)
        assert sub.n == int(np.asarray(ds.meta["carrier"]).sum())

    def test_divisibility_validated(self):
        with pytest.raises(ParameterError):
            PedigreeScenario(n_total=9)
        with pytest.raises(ParameterError):
            PedigreeScenario(family_effects=(0.5, 0.0))


class TestHighDimGenerator:
    def test_independent_blocks_when_rho_zero(self):
        ds = simulate_highdim(HighDimScenario(n=10_000, p=20, rho=0.0,
                                              seed=4))
        X = ds.X[:, 1:]
        cors = np.corrcoef(X, rowvar=False)
        off = cors[np.triu_indices(20, 1)]
        assert np.abs(off).max() < 0.1

    def test_null_pattern_is_standard_normal(self):
        sc = HighDimScenario(n=20_000, p=10, rho=0.3, seed=5)
        assert (highdim_beta(sc) == 0).all()
        ds = simulate_highdim(sc)
        assert abs(ds.y.mean()) < 0.03
        assert abs(ds.y.std() - 1.0) < 0.03

    def test_block_correlation_level(self):
        ds = simulate_highdim(HighDimScenario(n=10_000, p=20, rho=0.9,
                                              seed=6))
        X = ds.X[:, 1:]
        cors = np.corrcoef(X, rowvar=False)
        within = np.r_[cors[:10, :10][np.triu_indices(10, 1)],
                       cors[10:, 10:][np.triu_indices(10, 1)]]
        assert abs(within.mean() - 0.9) < 0.02

    def test_block_exchangeable_covariance_entrywise(self):
        sc = HighDimScenario(n=100_000, p=20, block_size=10, rho=0.4, seed=7)
        X = simulate_highdim(sc).X[:, 1:]
        cov = np.cov(X, rowvar=False)
        target = np.zeros((20, 20))
        for b in range(2):
            s = slice(10 * b, 10 * (b + 1))
            target[s, s] = 0.4
        np.fill_diagonal(target, 1.0)
        assert np.abs(cov - target).max() < 0.02

    def test_patterns(self):
        dense = highdim_beta(HighDimScenario(pattern="dense", p=40,
                                             signal_blocks=2,
                                             effect_value=0.3))
        sparse = highdim_beta(HighDimScenario(pattern="sparse", p=40,
                                              signal_blocks=2,
                                              effect_value=0.3))
        assert np.count_nonzero(dense) == 20
        assert np.count_nonzero(sparse) == 2
        assert sparse[0] == 0.3 and sparse[10] == 0.3


class TestRunReplications:
    def test_table_shape_and_determinism(self):
        sc = get_scenario("pedigree-null", M=400)
        methods = ("wplaus-lr", "chisq")
        a = run_replications(sc, methods, R=50, alpha_grid=(0.05, 0.3),
                             seed=3)
        b = run_replications(sc, methods, R=50, alpha_grid=(0.05, 0.3),
                             seed=3)
        assert a == b
        assert len(a.rows) == 4
        csv_text = a.to_csv()
        assert csv_text.splitlines()[0] == \
            "method,scenario_id,alpha,rate,se,R,failures"

    def test_threaded_run_matches_serial(self):
        sc = get_scenario("pedigree-null", M=300)
        methods = ("wplaus-lr", "lr")
        serial = run_replications(sc, methods, R=50,
                                  alpha_grid=(0.1,), seed=9, threads=1)
        threaded = run_replications(sc, methods, R=50,
                                    alpha_grid=(0.1,), seed=9, threads=4)
        assert serial == threaded

    def test_constant_p_method_has_zero_rate(self):
        # The goodness-of-fit arm on data with a weight-maximal observation
        # never rejects at tiny alpha; emulate with the lms arm returning 1.
        sc = get_scenario("pedigree-null", M=300)
        table = run_replications(sc, ("wplaus-lr",), R=50,
                                 alpha_grid=(1e-9,), seed=1)
        assert table.rows[0].rate == 0.0

    def test_minimum_replications(self):
        sc = get_scenario("pedigree-null")
        with pytest.raises(ParameterError):
            run_replications(sc, ("lr",), R=10, alpha_grid=(0.05,), seed=0)

    def test_unknown_scenario(self):
        with pytest.raises(ParameterError, match="unknown scenario"):
            get_scenario("nope")

    def test_rate_se_consistency(self):
        sc = get_scenario("pedigree-null", M=300)
        table = run_replications(sc, ("lr",), R=60, alpha_grid=(0.2,),
                                 seed=2)
        row = table.rows[0]
        assert_allclose(row.se, np.sqrt(row.rate * (1 - row.rate) / 60),
                        rtol=1e-12)
