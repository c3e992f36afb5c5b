import numpy as np
import pytest

from framework.errors import DataError
from models.config import SynthConfig, TrainConfig
from services.checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from services.graph_store import snapshot
from services.model import parameter_checksum
from services.sampling import NeighborSampler
from services.synth import synth_gaussian_sequence
from services.trainer import run_incremental


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    seq = synth_gaussian_sequence(SynthConfig(num_blocks=3, nodes_per_block=30, feature_dim=4, p_intra=0.1, p_inter=0.02, seed=0))
    cfg = TrainConfig(epochs=2, balancing_epochs=1, embedding_dim=8, layer_count=2, fanout=4, k=2, p=0.1, seed=0)
    out = tmp_path_factory.mktemp("run")
    return seq, cfg, out, run_incremental(seq, cfg, out)


def batch_on_first_snapshot(seq, cfg, seed=5):
    nodes = seq.nodes_in_block(1)
    return NeighborSampler(snapshot(seq, 1), cfg.fanout, np.random.default_rng(seed)).build_batch(nodes, cfg.layer_count)


def test_round_trip_keeps_parameters_and_predictions(trained, tmp_path):
    seq, cfg, _, result = trained
    path = save_checkpoint(result.model, tmp_path / "final.npz")
    restored = load_checkpoint(path)
    assert parameter_checksum(restored.parameters()) == parameter_checksum(result.model.parameters())
    assert [name for name, _ in restored.named_parameters()] == [name for name, _ in result.model.named_parameters()]
    assert restored.class_ids == result.model.class_ids
    assert (restored.input_frozen, restored.blocks_trained, restored.mode) == (True, 3, result.model.mode)
    batch = batch_on_first_snapshot(seq, cfg)
    assert np.array_equal(restored.predict(batch), result.model.predict(batch))


def test_restored_model_freezes_all_but_the_newest_expert(trained):
    _, _, out, _ = trained
    restored = load_checkpoint(out / "checkpoints" / "block_3.npz")
    for layer in restored.layers:
        assert not any(p.requires_grad for e in layer.experts[:2] for p in e.parameters())
        assert all(p.requires_grad for p in layer.experts[2].parameters())
    assert not restored.input_weight.requires_grad


def test_missing_file_and_foreign_version(tmp_path, trained):
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "absent.npz")
    _, _, _, result = trained
    path = save_checkpoint(result.model, tmp_path / "model.npz")
    with np.load(path) as archive:
        arrays = {key: archive[key] for key in archive.files}
    arrays["header"] = arrays["header"].copy()
    arrays["header"][0] = FORMAT_VERSION + 1
    np.savez(path, **arrays)
    with pytest.raises(DataError):
        load_checkpoint(path)


def full_batch(seq, limit, nodes, layer_count):
    # a fanout above every degree keeps whole neighborhoods, so the rng draws nothing
    return NeighborSampler(snapshot(seq, limit), 1000, np.random.default_rng(0)).build_batch(nodes, layer_count)


def test_first_expert_recovers_the_first_block_model(trained):
    seq, cfg, out, result = trained
    first = load_checkpoint(out / "checkpoints" / "block_1.npz")
    nodes = seq.nodes_in_block(1)
    then = first.forward(full_batch(seq, 1, nodes, cfg.layer_count), force_expert=1, force_beta=True).embeddings.data
    later = full_batch(seq, 3, nodes, cfg.layer_count)
    assert later.layers[-1].src_blocks.max() > 1
    now = result.model.forward(later, force_expert=1, force_beta=True).embeddings.data
    assert np.max(np.abs(now - then)) < 1e-6
