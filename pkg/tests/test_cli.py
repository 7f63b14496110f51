import json

import numpy as np
import pytest

from nlopnet.cli import main as cli
from nlopnet.cli.bundle import BundleError, load_bundle, save_bundle
from nlopnet.cli.cfl import (CorruptFileError, ShapeError, cfl_read, cfl_write, read_array, read_internal,
                             to_internal, write_array, write_internal)
from nlopnet.cli.metrics import eval_metrics, per_slice
from nlopnet.cli.reconet import ConfigError, build_network, network_config
from nlopnet.cli.simulate import sampling_lines, simulate
from nlopnet.mdarray import MdArray
from nlopnet.recon import adjoint_recon, build_sense

from conftest import crand


# -- array files --------------------------------------------------------------------


def test_cfl_roundtrip_bitwise(tmp_path, rng):
    a = crand(rng, (4, 4), np.complex64)
    write_array(tmp_path / "a", a)
    b = read_array(tmp_path / "a")
    assert b.shape == (4, 4) + (1,) * 14
    assert np.ascontiguousarray(b.reshape(4, 4)).tobytes() == a.tobytes()
    write_array(tmp_path / "b", b)
    assert (tmp_path / "a.cfl").read_bytes() == (tmp_path / "b.cfl").read_bytes()
    assert (tmp_path / "a.hdr").read_text() == (tmp_path / "b.hdr").read_text()


def test_cfl_mdarray_interface(tmp_path, rng):
    a = crand(rng, (3, 2, 5), np.complex64)
    cfl_write(tmp_path / "m", MdArray.from_numpy(a))
    assert cfl_read(tmp_path / "m").to_numpy()[:, :, :, 0].tobytes() == a.tobytes()


def test_cfl_payload_layout(tmp_path):
    a = np.arange(6).reshape(2, 3).astype(np.complex64) + 1j
    write_array(tmp_path / "x", a)
    assert (tmp_path / "x.hdr").read_text().split("\n")[1].split() == ["2", "3"] + ["1"] * 14
    raw = np.fromfile(tmp_path / "x.cfl", dtype="<f4")
    assert raw.size == 12
    # column major, interleaved (real, imag)
    np.testing.assert_array_equal(raw[0::2], [0, 3, 1, 4, 2, 5])
    np.testing.assert_array_equal(raw[1::2], 1)


def test_cfl_short_header_is_padded(tmp_path):
    (tmp_path / "s.hdr").write_text("# Dimensions\n2 3\n")
    np.zeros(6, dtype="<c8").tofile(tmp_path / "s.cfl")
    assert read_array(tmp_path / "s").shape == (2, 3) + (1,) * 14


def test_cfl_truncated_payload(tmp_path, rng):
    write_array(tmp_path / "t", crand(rng, (4, 4)))
    data = (tmp_path / "t.cfl").read_bytes()
    (tmp_path / "t.cfl").write_bytes(data[:-8])
    with pytest.raises(CorruptFileError):
        read_array(tmp_path / "t")


def test_cfl_bad_header(tmp_path):
    (tmp_path / "h.hdr").write_text("nothing here\n")
    with pytest.raises(CorruptFileError):
        read_array(tmp_path / "h")
    with pytest.raises(FileNotFoundError):
        read_array(tmp_path / "missing")


def test_internal_layout(tmp_path, rng):
    a = crand(rng, (4, 3, 2, 1, 5), np.complex64)
    write_internal(tmp_path / "k", a)
    dims = read_array(tmp_path / "k").shape
    assert dims[0] == 4 and dims[1] == 3 and dims[3] == 2 and dims[4] == 1 and dims[15] == 5
    assert read_internal(tmp_path / "k").tobytes() == a.tobytes()
    with pytest.raises(ShapeError, match="dimension 2"):
        to_internal(np.zeros((2, 2, 3) + (1,) * 13), "f")


def test_bundle_roundtrip(tmp_path, rng):
    arrays = {"w": crand(rng, (2, 3), np.complex64), "s": crand(rng, (4,), np.complex64)}
    save_bundle(tmp_path / "b", "varnet", {"T": 1}, 7, arrays, {"w": "weight", "s": "stat"})
    manifest, back = load_bundle(tmp_path / "b")
    assert manifest["network"] == "varnet" and manifest["seed"] == 7
    for k in arrays:
        assert back[k].tobytes() == arrays[k].tobytes()
    with pytest.raises(BundleError):
        load_bundle(tmp_path)


# -- simulation -------------------------------------------------------------------------


def test_sampled_line_count_matches_union():
    d = simulate(1, 368, 1, 4, 28, 0.0, seed=0)
    counted = int(np.count_nonzero(d["pattern"][0, :, 0, 0, 0]))
    start = 368 // 2 - 14
    assert counted == len(set(range(0, 368, 4)) | set(range(start, start + 28)))
    # every column of a sampled line is sampled
    assert np.count_nonzero(d["pattern"]) == 368 * counted


def test_sampling_lines_errors():
    with pytest.raises(ValueError):
        sampling_lines(16, 0, 4)
    with pytest.raises(ValueError):
        sampling_lines(16, 2, 17)


def test_fully_sampled_noiseless_adjoint_recovers_phantom():
    d = simulate(3, 16, 4, 1, 0, 0.0, seed=3)
    x0 = adjoint_recon(build_sense(d["coils"], d["pattern"]), d["kspace"].astype(np.complex128))
    np.testing.assert_allclose(x0, d["reference"], atol=1e-5)


def test_simulate_coil_normalization():
    d = simulate(2, 24, 6, 4, 4, 0.01, seed=1)
    np.testing.assert_allclose((np.abs(d["coils"].astype(np.complex128)) ** 2).sum(axis=2), 1, atol=1e-6)


def test_simulate_noise_only_on_samples():
    d = simulate(2, 16, 2, 4, 2, 0.1, seed=1)
    unsampled = np.broadcast_to(d["pattern"] == 0, d["kspace"].shape)
    assert not d["kspace"][unsampled].any() and d["kspace"][~unsampled].all()


def test_simulate_errors():
    with pytest.raises(ValueError):
        simulate(1, 16, 2, 4, 4, -1.0)
    with pytest.raises(ValueError):
        simulate(0, 16, 2, 4, 4, 0.0)


def simulate_files(tmp_path, tag="", extra=()):
    names = [str(tmp_path / f"{n}{tag}") for n in ("k", "c", "r", "p")]
    rc = cli.main(["simulate", "--slices", "4", "--size", "16", "--coils", "2", "--seed", "5", *extra, *names])
    assert rc == 0
    return names


def test_simulate_same_seed_bitwise(tmp_path):
    a = simulate_files(tmp_path, "1")
    b = simulate_files(tmp_path, "2")
    for x, y in zip(a, b):
        for ext in (".cfl", ".hdr"):
            assert open(x + ext, "rb").read() == open(y + ext, "rb").read()


# -- metrics ----------------------------------------------------------------------------


def test_metrics_identical():
    x = np.ones((3, 3))
    r = eval_metrics(x, x)
    assert r["mse"] == 0 and r["psnr"] == float("inf")


def test_metrics_formula_example():
    ref = np.zeros(100)
    ref[0] = 1
    rec = ref.copy()
    rec[1:] = 0.1
    rec[0] = 1.1
    assert eval_metrics(rec, ref)["psnr"] == pytest.approx(20)


def test_metrics_random_vs_oracle(rng):
    a, b = crand(rng, (8, 8)), crand(rng, (8, 8))
    m = rng.random((8, 8)) > 0.5
    sq = [(abs(a[i, j]) - abs(b[i, j])) ** 2 for i in range(8) for j in range(8) if m[i, j]]
    mse = sum(sq) / len(sq)
    peak = max(abs(b[i, j]) for i in range(8) for j in range(8) if m[i, j])
    r = eval_metrics(a, b, m)
    assert r["mse"] == pytest.approx(mse, rel=1e-12)
    assert r["psnr"] == pytest.approx(20 * np.log10(peak / np.sqrt(mse)), rel=1e-12)


def test_metrics_errors(rng):
    with pytest.raises(ValueError):
        eval_metrics(np.ones(3), np.ones(3), np.zeros(3))
    with pytest.raises(ValueError):
        eval_metrics(np.ones(3), np.ones(4))


def test_per_slice(rng):
    a, b = crand(rng, (4, 4, 3)), crand(rng, (4, 4, 3))
    rows = per_slice(a, b)
    assert len(rows) == 3
    assert rows[1] == eval_metrics(a[..., 1], b[..., 1])


# -- command line -----------------------------------------------------------------------


def run(capsys, *argv):
    rc = cli.main([str(a) for a in argv])
    return rc, capsys.readouterr()


def train_args(names, bundle, *extra):
    k, c, r, p = names
    return ["reconet", "--network", "varnet", "--train", "-T", "1", "--filters", "2", "--kernel", "3", "--rbf", "5",
            "--batch-size", "2", "--pattern", p, *extra, k, c, bundle, r]


def test_train_apply_metrics(tmp_path, capsys):
    names = simulate_files(tmp_path)
    bundle = tmp_path / "w"
    rc, out = run(capsys, *train_args(names, bundle, "--epochs", "2", "--lr", "1e-3", "--normalize"))
    assert rc == 0, out.err
    lines = out.out.strip().split("\n")
    assert lines[0].startswith("epoch 1 loss ") and lines[1].startswith("epoch 2 loss ")
    k, c, r, p = names
    rc, out = run(capsys, "reconet", "--apply", "--pattern", p, k, c, bundle, tmp_path / "out")
    assert rc == 0, out.err
    assert read_internal(tmp_path / "out").shape == (16, 16, 1, 1, 4)
    rc, out = run(capsys, "metrics", "--per-slice", "--mask", c, tmp_path / "out", r)
    rows = [json.loads(s) for s in out.out.strip().split("\n")]
    assert rc == 0 and len(rows) == 5 and rows[0]["slice"] == 0 and np.isfinite(rows[-1]["psnr"])


def test_network_mismatch_is_config_error(tmp_path, capsys):
    names = simulate_files(tmp_path)
    bundle = tmp_path / "w"
    assert run(capsys, *train_args(names, bundle, "--epochs", "0"))[0] == 0
    k, c, r, p = names
    rc, out = run(capsys, "reconet", "--network", "modl", "--apply", k, c, bundle, tmp_path / "o")
    assert rc == cli.EXIT_CONFIG
    assert out.err.startswith("nlopnet: config error:") and "varnet" in out.err
    rc, out = run(capsys, "reconet", "--apply", "-T", "4", k, c, bundle, tmp_path / "o")
    assert rc == cli.EXIT_CONFIG


def test_zero_epochs_saves_initialization(tmp_path, capsys):
    names = simulate_files(tmp_path)
    bundle = tmp_path / "w"
    assert run(capsys, *train_args(names, bundle, "--epochs", "0", "--seed", "9"))[0] == 0
    manifest, arrays = load_bundle(bundle)
    cfg = network_config("varnet", T=1, filters=2, kernel=3, rbf=5)
    net = build_network("varnet", (16, 16, 2, 1, 2), cfg).initialize(9)
    assert set(arrays) == set(net.weight_names)
    for n in net.weight_names:
        assert arrays[n].tobytes() == net.values[n].astype(np.complex64).tobytes()
    assert manifest["seed"] == 9 and manifest["config"]["T"] == 1


def test_shape_error_names_file_and_dimension(tmp_path, capsys):
    k, c, r, p = simulate_files(tmp_path)
    bad = tmp_path / "bad"
    write_internal(bad, np.zeros((16, 16, 3, 1, 4), np.complex64))
    rc, out = run(capsys, *train_args((k, str(bad), r, p), tmp_path / "w"))
    assert rc == cli.EXIT_FORMAT
    assert str(bad) in out.err and "dimension 3" in out.err


def test_exit_codes(tmp_path, capsys):
    k, c, r, p = simulate_files(tmp_path)
    rc, out = run(capsys, "metrics", tmp_path / "nope", r)
    assert rc == cli.EXIT_IO and out.err.startswith("nlopnet: io error:")
    write_array(tmp_path / "short", np.zeros(4))
    with open(tmp_path / "short.cfl", "ab") as f:
        f.write(b"\0")
    rc, _ = run(capsys, "metrics", tmp_path / "short", r)
    assert rc == cli.EXIT_FORMAT
    rc, _ = run(capsys, "reconet", "--train", k, c, tmp_path / "w", r)
    assert rc == cli.EXIT_CONFIG
    rc, _ = run(capsys, *train_args((k, c, r, p), tmp_path / "w", "--lr", "-1"))
    assert rc == cli.EXIT_CONFIG
    rc, _ = run(capsys, "simulate", "--accel", "0", *[tmp_path / n for n in "abc"])
    assert rc == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        cli.main(["reconet", "--train", "--apply", "a", "b", "c", "d"])
    assert e.value.code == 2


def test_non_finite_training_is_numerical_error(tmp_path, capsys):
    k, c, r, p = simulate_files(tmp_path)
    ref = read_internal(r)
    ref[0, 0, 0, 0, :] = np.nan
    write_internal(r, ref)
    rc, out = run(capsys, *train_args((k, c, r, p), tmp_path / "w"))
    assert rc == cli.EXIT_NUMERIC and "numerical error" in out.err


def test_apply_is_deterministic(tmp_path, capsys):
    k, c, r, p = simulate_files(tmp_path)
    assert run(capsys, *train_args((k, c, r, p), tmp_path / "w", "--epochs", "1", "--deterministic"))[0] == 0
    outs = []
    for n in ("o1", "o2"):
        assert run(capsys, "reconet", "--apply", "--deterministic", k, c, tmp_path / "w", tmp_path / n)[0] == 0
        outs.append((tmp_path / f"{n}.cfl").read_bytes())
    assert outs[0] == outs[1]


def test_pattern_estimated_when_absent(tmp_path, capsys):
    k, c, r, p = simulate_files(tmp_path, extra=("--noise", "0"))
    for pat in (("--pattern", p), ()):
        rc, _ = run(capsys, "reconet", "--network", "modl", "--train", "-T", "1", "--layers", "2", "--filters", "2",
                    "--cg-iter", "2", "--epochs", "0", *pat, k, c, tmp_path / f"w{len(pat)}", r)
        assert rc == 0
        assert run(capsys, "reconet", "--apply", *pat, k, c, tmp_path / f"w{len(pat)}",
                   tmp_path / f"o{len(pat)}")[0] == 0
    a = (tmp_path / "o0.cfl").read_bytes()
    assert a == (tmp_path / "o2.cfl").read_bytes()


def test_config_errors():
    with pytest.raises(ConfigError):
        network_config("varnet", layers=3)
    with pytest.raises(ConfigError):
        network_config("unet")


