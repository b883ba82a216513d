import pytest
import numpy as np

from src.autocf.analysis import experiments
from src.autocf.analysis.experiments import degradation, mask_schedule, noise_sweep, run_ablation
from src.autocf.constants import Variant
from src.autocf.exceptions import ConfigError
from src.autocf.training.diagnostics import toy_config
from src.autocf.training.trainer import train


class TestRunAblation:
    """Test suite for single-variant ablation runs."""

    def test_no_masking_run(self, toy_data, tmp_path):
        run = run_ablation('-M', toy_config(), toy_data, out_dir=str(tmp_path))
        assert run.variant is Variant.NO_M
        assert all(m['masked'] == 0 for m in run.result.mask_log)
        assert 0.0 <= run.report.recall(20, scope='ablation', group='-M') <= 1.0
        assert (tmp_path / '-M' / 'checkpoint' / 'meta.json').exists()

    def test_variant_keeps_seed(self, toy_data):
        config = toy_config(seed=11)
        run = run_ablation('-GSA', config, toy_data)
        assert run.result.state.step == 2
        assert config.variant == 'full'

    def test_random_mask_copies_full_counts(self, toy_data):
        config = toy_config(epochs=3, patience=100)
        full = train(config, toy_data)
        run = run_ablation('-L2M', config, toy_data)
        assert [m['masked'] for m in run.result.mask_log] == mask_schedule(full)
        assert len(run.result.mask_log) == 6

    def test_random_mask_reuses_reference(self, toy_data, mocker):
        config = toy_config(epochs=2, patience=100)
        full = train(config, toy_data)
        spy = mocker.spy(experiments, 'train')
        run = run_ablation('-L2M', config, toy_data, reference=full)
        assert spy.call_count == 1
        assert spy.call_args.kwargs['mask_schedule'] == mask_schedule(full)
        assert [m['masked'] for m in run.result.mask_log] == mask_schedule(full)

    def test_unknown_variant(self, toy_data):
        with pytest.raises(ConfigError):
            run_ablation('-XYZ', toy_config(), toy_data)


class TestNoiseSweep:
    """Test suite for the noise-robustness sweep."""

    def test_clean_reference_added(self, toy_data):
        sweep = noise_sweep([0.5], toy_config(), toy_data)
        assert sorted(sweep.reports) == [0.0, 0.5]
        clean = sweep.curve[sweep.curve['noise_ratio'] == 0.0]
        noisy = sweep.curve[sweep.curve['noise_ratio'] == 0.5]
        assert clean['noise_edges'].tolist() == [0, 0]
        # ceil(0.5 * 13) edges added
        assert noisy['noise_edges'].tolist() == [7, 7]
        assert np.allclose(clean['recall_degradation'], 0.0)
        assert np.allclose(clean['ndcg_degradation'], 0.0)

    def test_combined_report(self, toy_data):
        sweep = noise_sweep([0.0, 0.25], toy_config(), toy_data)
        combined = sweep.combined()
        assert len(combined.records) == 4
        assert set(combined.records['scope']) == {'noise'}
        assert combined.recall(40, scope='noise', noise_ratio=0.25) >= 0.0

    def test_invalid_ratio(self, toy_data):
        with pytest.raises(ConfigError):
            noise_sweep([1.5], toy_config(), toy_data)


class TestDegradation:
    """Test suite for relative degradation."""

    def test_relative_drop(self):
        assert degradation(0.2, 0.15) == pytest.approx(0.25)

    def test_improvement_is_negative(self):
        assert degradation(0.1, 0.12) == pytest.approx(-0.2)

    def test_zero_reference(self):
        assert degradation(0.0, 0.3) == 0.0
