import json

import numpy as np
import pytest

from freqmark import io
from freqmark.cli import main
from freqmark.tensor import FilterBank
from freqmark.trainer import HostNetwork
from freqmark.watermark import WatermarkModule, extract_signature

FAST = ["--steps", "20", "--warmup-steps", "20", "--samples", "8"]


@pytest.fixture(scope="module")
def model(tmp_path_factory):
    path = tmp_path_factory.mktemp("m") / "model.json"
    assert main(["embed", "--out", str(path), "--seed", "3", *FAST]) == 0
    return path


def test_embed_writes_loadable_model(model, capsys):
    host, meta, seed = io.load_model(model)
    assert seed == 3 and meta["lambda"] == 5e-4
    assert extract_signature(host.wm).components.shape == (16, 3, 32)


def test_embed_lambda_zero_recorded(tmp_path):
    out = tmp_path / "m0.json"
    assert main(["embed", "--out", str(out), "--lambda", "0", *FAST]) == 0
    assert io.load_model(out)[1]["lambda"] == 0.0


def test_embed_is_byte_deterministic(tmp_path, model):
    again = tmp_path / "again.json"
    assert main(["embed", "--out", str(again), "--seed", "3", *FAST]) == 0
    assert again.read_bytes() == model.read_bytes()


def test_embed_usage_errors(tmp_path):
    assert main(["embed", "--out", str(tmp_path / "missing" / "m.json"), *FAST]) == 2
    assert main(["embed", "--out", str(tmp_path / "m.json"), "--eta", "-1", *FAST]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["embed"])
    assert exc.value.code == 2


def test_model_round_trip_is_bit_exact(model, tmp_path):
    host, meta, seed = io.load_model(model)
    copy = tmp_path / "copy.json"
    io.save_model(copy, host, meta, seed)
    assert copy.read_bytes() == model.read_bytes()


def test_extract_is_deterministic(model, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["extract", str(model), "--out", str(a)]) == 0
    assert main(["extract", str(model), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    assert doc["version"] == 1 and doc["tau_default"] == 0.995


def test_extract_after_scaling(model, tmp_path):
    scaled = tmp_path / "scaled.json"
    assert main(["attack", str(model), '{"kind": "scale", "a": 10}', "--out", str(scaled)]) == 0
    src = io.load_signature_or_model(model)
    sus = io.load_signature_or_model(scaled)
    np.testing.assert_allclose(sus.components, 10 * src.components, rtol=1e-12)


def test_extract_zero_module(tmp_path):
    host = HostNetwork.init(2, 3, 9, 9, seed=0)
    zero = host.with_wm(WatermarkModule(FilterBank.zeros(16, 3, 3), 9, 9))
    path, sig = tmp_path / "zero.json", tmp_path / "sig.json"
    io.save_model(path, zero)
    assert main(["extract", str(path), "--out", str(sig)]) == 0
    loaded = io.load_signature(sig)
    assert not loaded.components.any() and len(loaded.frequencies) == 32


def test_corrupt_model_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["extract", str(bad), "--out", str(tmp_path / "s.json")]) == 3
    bad.write_text('{"version": 1, "wm": {}}')
    assert main(["extract", str(bad), "--out", str(tmp_path / "s.json")]) == 3
    assert main(["extract", str(tmp_path / "nope.json"), "--out", str(tmp_path / "s.json")]) == 3


def test_attack_unknown_kind_and_input_untouched(model, tmp_path):
    before = model.read_bytes()
    assert main(["attack", str(model), '{"kind": "prune"}', "--out", str(tmp_path / "x.json")]) == 2
    assert main(["attack", str(model), "not json", "--out", str(tmp_path / "x.json")]) == 2
    spec = tmp_path / "spec.json"
    spec.write_text('{"kind": "overwrite", "ratio": 0.5, "seed": 2}')
    out = tmp_path / "over.json"
    assert main(["attack", str(model), str(spec), "--out", str(out)]) == 0
    assert model.read_bytes() == before
    w = io.load_model(model)[0].wm.bank.filters
    w2 = io.load_model(out)[0].wm.bank.filters
    assert np.linalg.norm(w2 - w) / np.linalg.norm(w) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("chain", [
    ['{"kind": "scale", "a": 100}'],
    ['{"kind": "permute", "seed": 1}'],
    ['{"kind": "scale", "a": 10}', '{"kind": "permute", "seed": 4}', '{"kind": "scale", "a": 3}'],
])
def test_detect_after_scale_and_permute_chains(model, tmp_path, capsys, chain):
    current = model
    for i, spec in enumerate(chain):
        nxt = tmp_path / f"step{i}.json"
        assert main(["attack", str(current), spec, "--out", str(nxt)]) == 0
        current = nxt
    sig = tmp_path / "sig.json"
    main(["extract", str(model), "--out", str(sig)])
    capsys.readouterr()
    assert main(["detect", str(sig), str(current)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["dr"] == 100.0 and report["tau"] == 0.995 and report["match"]


def test_detect_fresh_model_is_no_match(model, tmp_path, capsys):
    other = tmp_path / "other.json"
    assert main(["embed", "--out", str(other), "--seed", "11", *FAST]) == 0
    capsys.readouterr()
    out = tmp_path / "report.json"
    assert main(["detect", str(model), str(other), "--out", str(out)]) == 1
    report = json.loads(out.read_text())
    assert report["dr"] < 50 and not report["match"]


def test_detect_threshold_and_tau_flags(model, capsys):
    assert main(["detect", str(model), str(model), "--tau", "0.9", "--threshold", "100"]) == 0
    assert json.loads(capsys.readouterr().out)["tau"] == 0.9
    assert main(["detect", str(model), str(model), "--tau", "1.5"]) == 2


def test_detect_geometry_mismatch(model, tmp_path):
    host = HostNetwork.init(2, 3, 9, 9, seed=0, D=4)
    small = tmp_path / "small.json"
    io.save_model(small, host)
    assert main(["detect", str(model), str(small)]) == 3


def test_heatmap_outputs(model, tmp_path):
    out = tmp_path / "h.csv"
    assert main(["heatmap", str(model), str(model), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(f"v{v}" for v in range(9))
    assert len(lines) == 10
    assert not io.read_heatmap_csv(out.read_text()).any()
    scaled = tmp_path / "s.json"
    main(["attack", str(model), '{"kind": "scale", "a": 2}', "--out", str(scaled)])
    plain, cent = tmp_path / "p.csv", tmp_path / "c.csv"
    main(["heatmap", str(model), str(scaled), "--out", str(plain)])
    main(["heatmap", str(model), str(scaled), "--out", str(cent), "--centered"])
    np.testing.assert_array_equal(np.fft.fftshift(io.read_heatmap_csv(plain.read_text())),
                                  io.read_heatmap_csv(cent.read_text()))


def test_heatmap_geometry_mismatch(model, tmp_path):
    other = tmp_path / "o.json"
    io.save_model(other, HostNetwork.init(2, 3, 9, 9, seed=0, D=4))
    assert main(["heatmap", str(model), str(other), "--out", str(tmp_path / "h.csv")]) == 3


def test_verify_theorems(capsys):
    assert main(["verify-theorems", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert out.count("ok") == 5 and "FAIL" not in out


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "f.txt"
    io.atomic_write(target, "hello\n")
    io.atomic_write(target, "again\n")
    assert target.read_text() == "again\n"
    assert [p.name for p in tmp_path.iterdir()] == ["f.txt"]
