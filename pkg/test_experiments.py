import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from constants import alpha_threshold
from dynamics import CboConfig
from experiments import (EXPERIMENT_KINDS, EXPERIMENTS, TREND_NOTE, ExperimentPlan, ExperimentRunner, Verdict,
                         run_block_check, run_decomposition_check, run_euler_sweep, run_laplace_sweep, run_poc_sweep,
                         run_theorem1, run_theorem2, run_theorem3)


def _zero_noise_euler_plan():
    cfg = CboConfig(n_particles=10, alpha=10.0, zeta=0.25, m0=(1.0,), noise_scale_override=0.0)
    return ExperimentPlan(kind='euler_sweep', base_cfg=cfg, sweep=[('eta0', [0.05, 0.025, 0.0125])],
                          options={'T': 1.0})


class TestExperimentPlan:
    def test_every_kind_has_a_runner(self):
        assert set(EXPERIMENTS) == set(EXPERIMENT_KINDS)

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError, match="kind"):
            ExperimentPlan(kind='rate_check', base_cfg=CboConfig())

    def test_rejects_unknown_sweep_field(self):
        with pytest.raises(ValueError, match="not a CboConfig field"):
            ExperimentPlan(kind='poc_sweep', base_cfg=CboConfig(), sweep=[('particles', [10])])

    def test_rejects_empty_sweep(self):
        with pytest.raises(ValueError, match="no values"):
            ExperimentPlan(kind='poc_sweep', base_cfg=CboConfig(), sweep=[('n_particles', [])])

    def test_rejects_zero_replicates(self):
        with pytest.raises(ValueError, match="replicates"):
            ExperimentPlan(kind='poc_sweep', base_cfg=CboConfig(), replicates=0)

    def test_run_seeds(self):
        assert ExperimentPlan(kind='poc_sweep', base_cfg=CboConfig(seed=7), replicates=3).run_seeds() == [7, 8, 9]
        plan = ExperimentPlan(kind='poc_sweep', base_cfg=CboConfig(seed=7), replicates=3, seeds=[1, 5])
        assert plan.run_seeds() == [1, 5]

    def test_sweep_values(self):
        plan = ExperimentPlan(kind='theorem2_scaling', base_cfg=CboConfig(), sweep=[('n_particles', [10, 20])])
        assert plan.sweep_values('n_particles') == [10, 20]
        assert plan.sweep_values('alpha', [1.0]) == [1.0]
        with pytest.raises(ValueError, match="needs a sweep"):
            plan.sweep_values('alpha')

    def test_dict_round_trip(self):
        plan = ExperimentPlan(kind='laplace_sweep', base_cfg=CboConfig(dim=2, m0=(1.0, 0.0)), objective='rastrigin',
                              shift=(0.5, 0.5), sweep=[('alpha', [10.0, 20.0])], seeds=[3], options={'t': 2.0})
        again = ExperimentPlan.from_dict(json.loads(json.dumps(plan.to_dict())))
        assert again.to_dict() == plan.to_dict()
        assert again.spec().name == 'rastrigin'


class TestExperimentRunner:
    def test_results_keep_job_order(self):
        jobs = {key: (key,) for key in [5, 1, 4, 2, 3]}
        assert list(ExperimentRunner(threads=4).map(lambda x: x * x, jobs).items()) == \
            [(5, 25), (1, 1), (4, 16), (2, 4), (3, 9)]

    def test_thread_count_does_not_change_results(self):
        plan = _zero_noise_euler_plan()
        single = ExperimentRunner(threads=1).run(plan)
        pooled = ExperimentRunner(threads=3).run(plan)
        assert single.to_dict() == pooled.to_dict()
        pd.testing.assert_frame_equal(single.artifacts['euler'], pooled.artifacts['euler'])

    def test_invalid_thread_count(self):
        with pytest.raises(ValueError, match="threads"):
            ExperimentRunner(threads=0)


class TestVerdict:
    def test_json_has_plain_values(self):
        verdict = Verdict(kind='poc_sweep', passed=None, metrics={'slope': np.float64(np.nan)}, error='stopped')
        assert verdict.to_dict() == {'kind': 'poc_sweep', 'pass': None, 'metrics': {'slope': 'nan'}, 'notes': [],
                                     'error': 'stopped'}

    def test_write_is_reproducible(self, tmp_path):
        plan = _zero_noise_euler_plan()
        first = run_euler_sweep(plan).write(tmp_path / 'a')
        second = run_euler_sweep(plan).write(tmp_path / 'b')
        assert [p.name for p in first] == ['config.json', 'verdict.json', 'euler.csv']
        for left, right in zip(first, second):
            assert left.read_bytes() == right.read_bytes()


class TestMeanFieldRate:
    def test_quadratic_flow_meets_rate_and_plateau(self):
        cfg = CboConfig(alpha=200.0, gamma=4.0, sigma0_sq=0.02, m0=(1.0,))
        verdict = run_theorem1(ExperimentPlan(kind='theorem1_rate', base_cfg=cfg, options={'T': 10.0, 'c_lap': 1.0}))
        assert verdict.passed is True
        # Exact decay rate gamma lam / (1 + gamma lam) = 0.8 against c1 = 2/3
        assert verdict.metrics['fitted_rate'] == pytest.approx(0.8, rel=1e-4)
        assert verdict.metrics['c1'] == pytest.approx(2.0 / 3.0)
        assert TREND_NOTE in verdict.notes
        assert {'distance', 'law_error', 'plateau_bound'} <= set(verdict.artifacts['flow'].columns)

    def test_started_at_minimizer(self):
        cfg = CboConfig(alpha=200.0, gamma=4.0, sigma0_sq=0.02, m0=(0.0,))
        verdict = run_theorem1(ExperimentPlan(kind='theorem1_rate', base_cfg=cfg, options={'T': 2.0, 'c_lap': 1.0}))
        assert verdict.passed is True
        assert verdict.metrics['stationary'] is True
        assert any('stationary' in note for note in verdict.notes)

    def test_estimates_c_lap_when_not_supplied(self):
        cfg = CboConfig(alpha=200.0, gamma=4.0, sigma0_sq=0.02, m0=(1.0,))
        plan = ExperimentPlan(kind='theorem1_rate', base_cfg=cfg, objective='quartic_quad',
                              options={'T': 4.0, 'h': 0.05})
        verdict = run_theorem1(plan)
        assert verdict.passed is True, verdict.metrics
        c_lap = verdict.metrics['c_lap']
        assert 0.0 < c_lap < 10.0
        assert verdict.metrics['alpha0'] == pytest.approx(alpha_threshold(c_lap, 1.0, 4.0, 1))
        assert verdict.metrics['alpha0'] < 200.0
        assert any(note.startswith('C^Lap estimated') for note in verdict.notes)


class TestBlockCheck:
    def test_contracting_record(self):
        record = pd.DataFrame({'k': np.arange(10), 't': np.arange(10.0), 'mse': 0.5 ** np.arange(10) + 0.01})
        plan = ExperimentPlan(kind='block_check', base_cfg=CboConfig(), options={'T_block': 1.0})
        verdict = run_block_check(plan, record=record)
        assert verdict.passed is True
        assert verdict.metrics['rho'] == pytest.approx(0.5)
        assert len(verdict.artifacts['blocks']) == 10

    def test_short_record_is_an_error(self):
        record = pd.DataFrame({'k': [0, 1, 2], 't': [0.0, 1.0, 2.0], 'mse': [1.0, 0.5, 0.25]})
        plan = ExperimentPlan(kind='block_check', base_cfg=CboConfig(), options={'T_block': 1.0})
        verdict = run_block_check(plan, record=record)
        assert verdict.passed is None
        assert verdict.error

    def test_few_blocks_noted(self):
        record = pd.DataFrame({'k': np.arange(5), 't': np.arange(5.0), 'mse': 0.5 ** np.arange(5)})
        plan = ExperimentPlan(kind='block_check', base_cfg=CboConfig(), options={'T_block': 1.0})
        verdict = run_block_check(plan, record=record)
        assert any('block boundaries' in note for note in verdict.notes)


class TestLaplaceSweep:
    def test_quadratic_reports_solver_residual(self):
        plan = ExperimentPlan(kind='laplace_sweep', base_cfg=CboConfig(m0=(1.0,)), sweep=[('alpha', [10.0, 100.0])])
        verdict = run_laplace_sweep(plan)
        assert verdict.passed is True
        assert verdict.metrics['c_lap_estimate'] == 0.0

    @pytest.mark.slow
    def test_quartic_gap_scales_inversely_with_alpha(self):
        plan = ExperimentPlan(kind='laplace_sweep', base_cfg=CboConfig(m0=(1.0,)), objective='quartic_quad')
        verdict = run_laplace_sweep(plan, ExperimentRunner(threads=2))
        assert verdict.passed is True, verdict.metrics
        assert list(verdict.artifacts['laplace'].columns) == ['alpha', 'gap', 'stderr', 'gap_times_alpha']


class TestPocSweep:
    def test_systems_per_seed_are_averaged(self):
        cfg = CboConfig(alpha=100.0, gamma=4.0, sigma0_sq=0.04, m0=(1.0,))
        plan = ExperimentPlan(kind='poc_sweep', base_cfg=cfg, sweep=[('n_particles', [10, 20])], seeds=[0],
                              options={'T': 0.2, 'systems_per_seed': 3})
        verdict = run_poc_sweep(plan)
        table = verdict.artifacts['poc']
        assert len(table) == 6
        assert sorted(set(table['replica'])) == [0, 1, 2]
        assert verdict.metrics['mean_gap'] == table.groupby('n')['gap'].mean().tolist()

    def test_invalid_systems_per_seed(self):
        plan = ExperimentPlan(kind='poc_sweep', base_cfg=CboConfig(), options={'systems_per_seed': 0})
        with pytest.raises(ValueError, match="systems_per_seed"):
            run_poc_sweep(plan)

    @pytest.mark.slow
    def test_gap_scales_inversely_with_n(self):
        config = json.loads(Path('configs/poc.json').read_text())
        cfg = CboConfig(**config['cbo'])
        section = config['poc']
        plan = ExperimentPlan(kind='poc_sweep', base_cfg=cfg, sweep=[('n_particles', section['n_values'])],
                              seeds=section['seeds'],
                              options={k: v for k, v in section.items() if k not in ('n_values', 'seeds')})
        assert section['n_values'] == [25, 50, 100, 200, 400] and len(section['seeds']) == 5
        assert section['T'] == 2.0
        verdict = run_poc_sweep(plan, ExperimentRunner(threads=4))
        assert verdict.passed is True, verdict.metrics
        assert all(np.isfinite(verdict.metrics['growth_ratio']))


class TestEulerSweep:
    def test_zero_noise_gap_grows_with_step(self):
        verdict = run_euler_sweep(_zero_noise_euler_plan())
        assert verdict.passed is True
        assert 1.5 <= verdict.metrics['slope'] <= 2.5


class TestDecompositionCheck:
    def test_particle_variance_follows_law(self):
        cfg = CboConfig(alpha=100.0, gamma=4.0, sigma0_sq=1.0, n_particles=5000, m0=(1.0,))
        verdict = run_decomposition_check(ExperimentPlan(kind='decomposition_check', base_cfg=cfg))
        assert verdict.passed is True, verdict.metrics
        assert verdict.artifacts['decomposition']['t'].tolist() == [0.5, 1.0, 2.0, 5.0]

    def test_single_particle_is_an_error(self):
        cfg = CboConfig(n_particles=1)
        verdict = run_decomposition_check(ExperimentPlan(kind='decomposition_check', base_cfg=cfg))
        assert verdict.passed is None


@pytest.mark.slow
class TestParticleScaling:
    def test_terminal_mse_approaches_meanfield_plateau(self):
        cfg = CboConfig(alpha=100.0, gamma=4.0, m0=(1.0,), max_iter=1000)
        plan = ExperimentPlan(kind='theorem2_scaling', base_cfg=cfg, sweep=[('n_particles', [50, 200, 800])],
                              replicates=4, options={'record_every': 10})
        verdict = run_theorem2(plan, ExperimentRunner(threads=4))
        assert verdict.passed is True, verdict.metrics

    def test_best_particle_improves_with_n(self):
        cfg = CboConfig(dim=2, alpha=200.0, gamma=4.0, m0=(1.0, 1.0), max_iter=500)
        plan = ExperimentPlan(kind='theorem3_best', base_cfg=cfg, objective='rastrigin',
                              sweep=[('n_particles', [16, 64, 256])], replicates=4)
        verdict = run_theorem3(plan, ExperimentRunner(threads=4))
        assert verdict.passed is True, verdict.metrics
        assert 1 in set(verdict.artifacts['best']['n'])
