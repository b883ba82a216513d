import json
import os

import pytest
import numpy as np
import pandas as pd

from src.autocf.constants import Variant
from src.autocf.data.split import DatasetSplit
from src.autocf.exceptions import (CheckpointNotFoundError, ConfigError, NonFiniteError,
                                   TrainingDivergedError)
from src.autocf.model.autocf import (MaskStructure, init_model, inference_embeddings, joint_loss,
                                     unmasked_structure)
from src.autocf.model.decoder import sample_attention_graph
from src.autocf.model.encoder import normalized_weights
from src.autocf.model.losses import LossBreakdown
from src.autocf.model.mask import mask_edges
from src.autocf.tensor import Tensor
from src.autocf.training.checkpoint import load_checkpoint, save_checkpoint
from src.autocf.training.diagnostics import (check_joint_loss_gradients, frozen_structure,
                                             toy_config, toy_graph)
from src.autocf.training.trainer import TrainConfig, Trainer, train


@pytest.fixture
def toy_model(toy, rng):
    config = toy_config()
    state = init_model(toy.num_users, toy.num_items, config.embedding_dim, config.heads, rng)
    return config, state, frozen_structure(state, toy, config, rng)


def full_batch(graph):
    return np.stack([graph.users, graph.items], axis=1)


class TestTrainConfig:
    """Test suite for training configuration validation."""

    def test_defaults_validate(self):
        config = TrainConfig().validate()
        assert config.embedding_dim == 32
        assert config.cutoffs == (20, 40)

    @pytest.mark.parametrize('overrides, key', [
        ({'embedding_dim': 30, 'heads': 4}, 'heads'),
        ({'lambda1': 20.0}, 'lambda1'),
        ({'lambda2': 0.1}, 'lambda2'),
        ({'rho': 0.0}, 'rho'),
        ({'centric': -1}, 'centric'),
        ({'readout': 'max'}, 'readout'),
        ({'variant': '-XYZ'}, 'variant'),
        ({'precision': 'float16'}, 'precision'),
        ({'batch_size': 0}, 'batch_size'),
    ])
    def test_invalid_values(self, overrides, key):
        with pytest.raises(ConfigError) as excinfo:
            TrainConfig(**overrides).validate()
        assert excinfo.value.key == key

    def test_zero_weights_allowed(self):
        TrainConfig(lambda1=0.0, lambda2=0.0, centric=0).validate()

    def test_from_dict(self):
        config = TrainConfig.from_dict({'heads': 2, 'cutoffs': [5, 10]})
        assert config.heads == 2
        assert config.cutoffs == (5, 10)
        assert TrainConfig.from_dict(config.to_dict()) == config

    def test_from_dict_unknown_key(self):
        with pytest.raises(ConfigError) as excinfo:
            TrainConfig.from_dict({'learning_rate': 0.1})
        assert excinfo.value.key == 'learning_rate'


class TestJointLoss:
    """Test suite for joint loss assembly and gating."""

    def test_breakdown_recomposes(self, toy, toy_model):
        config, state, structure = toy_model
        _, breakdown = joint_loss(state, toy, structure, full_batch(toy), config.loss_settings())
        assert structure.plan.num_masked > 0
        assert breakdown.recon != 0.0
        assert breakdown.infomax < 0.0
        assert abs(breakdown.recompose() - breakdown.total) < 1e-10

    def test_lambda1_zero_skips_self_supervision(self, toy, toy_model):
        _, state, structure = toy_model
        settings = toy_config(lambda1=0.0).loss_settings()
        total, breakdown = joint_loss(state, toy, structure, full_batch(toy), settings)
        assert breakdown.recon == breakdown.uniformity == breakdown.infomax == 0.0
        assert total.item() == pytest.approx(breakdown.rec + 1e-4 * breakdown.weight_decay)

    def test_lambda2_zero_skips_decay(self, toy, toy_model):
        _, state, structure = toy_model
        _, breakdown = joint_loss(state, toy, structure, full_batch(toy),
                                  toy_config(lambda2=0.0).loss_settings())
        assert breakdown.weight_decay == 0.0

    def test_nothing_masked(self, toy, toy_model):
        config, state, _ = toy_model
        _, breakdown = joint_loss(state, toy, unmasked_structure(toy), full_batch(toy),
                                  config.loss_settings())
        assert breakdown.recon == 0.0

    def test_no_masking_variant(self, toy, toy_model):
        _, state, structure = toy_model
        _, breakdown = joint_loss(state, toy, structure, full_batch(toy),
                                  toy_config(variant='-M').loss_settings())
        assert breakdown.recon == breakdown.infomax == 0.0
        assert breakdown.uniformity != 0.0

    def test_no_infomax_variant(self, toy, toy_model):
        _, state, structure = toy_model
        _, breakdown = joint_loss(state, toy, structure, full_batch(toy),
                                  toy_config(variant='-IM').loss_settings())
        assert breakdown.infomax == 0.0
        assert breakdown.recon != 0.0

    def test_inference_uses_full_graph(self, toy, toy_model):
        config, state, _ = toy_model
        h_hat = inference_embeddings(state, toy, config.layers)
        assert h_hat.shape == (toy.num_nodes, config.embedding_dim)
        assert np.isfinite(h_hat).all()


class TestGradientCheck:
    """Test suite for the joint-loss gradient check on the toy graph."""

    @pytest.mark.parametrize('variant', ['full', '-GSA', '-IM'])
    def test_passes(self, variant):
        report = check_joint_loss_gradients(variant=variant)
        assert report.passed, report
        assert report.max_relative_error < 1e-4
        assert report.coordinates == 200
        assert report.masked_edges > 0


class TestTrainer:
    """Test suite for the training loop."""

    def test_deterministic(self, toy_data):
        config = toy_config(epochs=2)
        first = train(config, toy_data)
        second = train(config, toy_data)
        assert first.loss_log == second.loss_log
        assert first.mask_log == second.mask_log
        assert np.array_equal(first.state.ego.values, second.state.ego.values)

    def test_seed_changes_run(self, toy_data):
        first = train(toy_config(seed=1), toy_data)
        second = train(toy_config(seed=2), toy_data)
        assert not np.array_equal(first.state.ego.values, second.state.ego.values)

    def test_epoch_log(self, toy_data):
        entries = []
        result = train(toy_config(epochs=2), toy_data, epoch_callback=entries.append)
        assert entries == result.epoch_log
        assert set(entries[0]) == {'epoch', 'steps', 'rec', 'recon', 'uniformity', 'infomax',
                                   'weight_decay', 'total', 'validation_recall@20', 'wall_seconds'}
        # 13 edges in batches of 8
        assert [e['steps'] for e in entries] == [2, 4]
        assert len(result.loss_log) == 4

    def test_remask_period(self, toy_data):
        result = train(toy_config(epochs=3, remask_period=2), toy_data)
        assert [m['step'] for m in result.mask_log] == [0, 2, 4]

    def test_lambda1_zero(self, toy_data):
        result = train(toy_config(epochs=2, lambda1=0.0), toy_data)
        for record in result.loss_log:
            assert record['recon'] == record['uniformity'] == record['infomax'] == 0.0

    def test_zero_centric_masks_nothing(self, toy_data):
        result = train(toy_config(centric=0), toy_data)
        assert all(m['masked'] == 0 and m['centric'] == 0 for m in result.mask_log)
        assert all(record['recon'] == 0.0 for record in result.loss_log)

    def test_no_masking_variant(self, toy_data):
        result = train(toy_config(variant='-M'), toy_data)
        assert all(m['masked'] == 0 for m in result.mask_log)
        assert all(r['recon'] == r['infomax'] == 0.0 for r in result.loss_log)

    def test_random_mask_follows_schedule(self, toy_data):
        full = train(toy_config(epochs=4, patience=100), toy_data)
        schedule = [m['masked'] for m in full.mask_log]
        random = train(toy_config(variant='-L2M', epochs=4, patience=100), toy_data,
                       mask_schedule=schedule)
        assert [m['masked'] for m in random.mask_log] == schedule
        assert [m['learned_masked'] for m in random.mask_log] == schedule
        assert all(m['centric'] == 0 for m in random.mask_log)

    def test_random_mask_after_schedule_ends(self, toy_data):
        result = train(toy_config(variant='-L2M'), toy_data, mask_schedule=[3])
        first, second = result.mask_log
        assert first['masked'] == 3
        assert second['masked'] == second['learned_masked']

    def test_random_mask_without_schedule(self, toy_data):
        result = train(toy_config(variant='-L2M', epochs=2), toy_data)
        assert all(m['masked'] == m['learned_masked'] for m in result.mask_log)
        assert all(m['centric'] == 0 for m in result.mask_log)

    def test_schedule_needs_random_mask_variant(self, toy_data):
        with pytest.raises(ConfigError) as excinfo:
            Trainer(toy_config(), toy_data, mask_schedule=[3])
        assert excinfo.value.key == 'variant'

    def test_loss_decreases_with_masking(self, toy_data):
        config = toy_config(remask_period=10, batch_size=16, patience=100, epochs=30)
        totals = [e['total'] for e in train(config, toy_data).epoch_log]
        assert len(totals) == 30
        decreasing = sum(b < a for a, b in zip(totals, totals[1:]))
        assert decreasing >= 0.8 * (len(totals) - 1)

    def test_early_stopping(self, toy_data, mocker):
        mocker.patch.object(Trainer, 'validation_recall', side_effect=[0.5, 0.4, 0.3, 0.9, 0.9])
        result = train(toy_config(epochs=5, patience=2), toy_data)
        assert len(result.epoch_log) == 3
        assert result.best_epoch == 1
        assert result.best_validation == 0.5
        assert result.state.step == 2

    def test_without_validation(self, toy):
        split = DatasetSplit(toy, np.empty((0, 2), dtype=np.int64), np.array([[0, 5]]),
                             0, (0.9, 0.0, 0.1))
        result = train(toy_config(epochs=2), split)
        assert result.best_validation is None
        assert result.best_epoch == 2
        assert result.epoch_log[-1]['validation_recall@20'] is None

    def test_output_files(self, toy_data, tmp_path):
        train(toy_config(epochs=2), toy_data, out_dir=str(tmp_path))
        for name in ('loss_log.jsonl', 'epochs.jsonl', 'masks.jsonl'):
            assert (tmp_path / name).exists()
        with open(tmp_path / 'epochs.jsonl') as f:
            assert len(f.readlines()) == 2
        assert (tmp_path / 'checkpoint' / 'meta.json').exists()
        assert not (tmp_path / 'relatedness').exists()

    def test_relatedness_audit(self, toy, toy_data, tmp_path):
        result = train(toy_config(audit=True), toy_data, out_dir=str(tmp_path))
        audit_dir = tmp_path / 'relatedness'
        assert sorted(os.listdir(audit_dir)) == ['step_0.tsv', 'step_1.tsv']
        for entry in result.mask_log:
            frame = pd.read_csv(audit_dir / f"step_{entry['step']}.tsv", sep='\t')
            assert len(frame) == toy.num_nodes
            assert frame['centric'].sum() == entry['centric']

    def test_relatedness_audit_needs_out_dir(self, toy_data, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        result = train(toy_config(audit=True), toy_data)
        assert len(result.mask_log) == 2
        assert os.listdir(tmp_path) == []

    def test_precision(self, toy_data):
        trainer = Trainer(toy_config(precision='float32'), toy_data)
        assert trainer.state.ego.values.dtype == np.float32


class TestDisconnectedRemasks:
    """Test suite for the isolated-batch guard."""

    @pytest.fixture
    def isolating(self, toy, rng):
        plan = mask_edges(toy, list(range(toy.num_users)), 1)
        assert plan.surviving_graph.num_edges == 0
        return MaskStructure(plan, normalized_weights(plan.surviving_graph),
                             sample_attention_graph(plan, 1.0, rng))

    def test_halves_centric_count(self, toy_data, isolating):
        trainer = Trainer(toy_config(centric=4, max_disconnected_remasks=0), toy_data)
        trainer._check_disconnected(isolating, np.array([[0, 0]]))
        assert trainer.centric == 2
        assert trainer.disconnected_remasks == 0

    def test_counts_consecutive_remasks(self, toy_data, isolating):
        trainer = Trainer(toy_config(centric=4, max_disconnected_remasks=1), toy_data)
        trainer._check_disconnected(isolating, np.array([[0, 0]]))
        assert trainer.centric == 4
        trainer._check_disconnected(isolating, np.array([[1, 2]]))
        assert trainer.centric == 2

    def test_connected_batch_resets(self, toy, toy_data, isolating, rng):
        trainer = Trainer(toy_config(centric=4, max_disconnected_remasks=1), toy_data)
        trainer._check_disconnected(isolating, np.array([[0, 0]]))
        plan = mask_edges(toy, [0], 1)
        partial = MaskStructure(plan, normalized_weights(plan.surviving_graph),
                                sample_attention_graph(plan, 1.0, rng))
        trainer._check_disconnected(partial, np.array([[1, 1]]))
        assert trainer.disconnected_remasks == 0
        assert trainer.centric == 4


class TestDivergence:
    """Test suite for non-finite loss handling."""

    def test_nan_loss_saves_last_good(self, toy_data, tmp_path, mocker):
        nan = float('nan')
        breakdown = LossBreakdown(nan, nan, nan, nan, nan, nan)
        mocker.patch('src.autocf.training.trainer.joint_loss', return_value=(Tensor(nan), breakdown))
        with pytest.raises(TrainingDivergedError) as excinfo:
            train(toy_config(), toy_data, out_dir=str(tmp_path))
        assert excinfo.value.checkpoint_path == os.path.join(str(tmp_path), 'last_good')
        state, config = load_checkpoint(excinfo.value.checkpoint_path)
        assert state.step == 0
        assert config['seed'] == 7
        assert (tmp_path / 'loss_log.jsonl').exists()

    def test_nan_gradient_names_parameter(self, toy_data, mocker):
        mocker.patch('src.autocf.training.trainer.adam_step',
                     side_effect=NonFiniteError('gradient is NaN', parameter='w_q'))
        with pytest.raises(TrainingDivergedError) as excinfo:
            train(toy_config(), toy_data)
        assert excinfo.value.parameter == 'w_q'
        assert excinfo.value.checkpoint_path is None


class TestCheckpoint:
    """Test suite for checkpoint files."""

    def test_round_trip(self, toy_data, tmp_path):
        config = toy_config(epochs=2)
        result = train(config, toy_data)
        directory = save_checkpoint(result.state, config.to_dict(), str(tmp_path / 'ckpt'))
        state, stored = load_checkpoint(directory)
        for name, param in result.state.parameters().items():
            assert np.array_equal(state.parameters()[name].values, param.values)
            assert np.array_equal(state.adam.m[name], result.state.adam.m[name])
        assert state.step == result.state.step
        assert state.attention.heads == 2
        assert TrainConfig.from_dict(stored) == config

    def test_byte_identical(self, toy, rng, tmp_path):
        state = init_model(toy.num_users, toy.num_items, 4, 2, rng)
        first = save_checkpoint(state, {}, str(tmp_path / 'a'))
        second = save_checkpoint(state, {}, str(tmp_path / 'b'))
        for name in sorted(os.listdir(first)):
            with open(os.path.join(first, name), 'rb') as a, open(os.path.join(second, name), 'rb') as b:
                assert a.read() == b.read()

    def test_missing(self, tmp_path):
        with pytest.raises(CheckpointNotFoundError):
            load_checkpoint(str(tmp_path / 'nowhere'))

    def test_unsupported_format(self, toy, rng, tmp_path):
        state = init_model(toy.num_users, toy.num_items, 4, 2, rng)
        directory = save_checkpoint(state, {}, str(tmp_path / 'ckpt'))
        meta_path = os.path.join(directory, 'meta.json')
        with open(meta_path) as f:
            meta = json.load(f)
        meta['format_version'] = 99
        with open(meta_path, 'w') as f:
            json.dump(meta, f)
        with pytest.raises(ConfigError):
            load_checkpoint(directory)


def test_toy_graph_shape():
    graph = toy_graph()
    assert (graph.num_users, graph.num_items, graph.num_edges) == (5, 6, 13)
    assert Variant.parse('-GSA') is Variant.NO_GSA
