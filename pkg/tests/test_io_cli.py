import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fadc import io
from fadc.cli import main
from fadc.toyseg.train import TrainConfig

SMALL_CONFIG = """\
# tiny run for the CLI tests
seed = 1
image_size = 16
dataset_size = 8
channels = 3
epochs = 2
batch_size = 4
s_window = 8
"""


# ---------------------------------------------------------------- tensor files


def test_header_layout_by_hand():
    x = np.arange(6.0).reshape(1, 2, 3, 1)
    buf = io.encode_tensor(x)
    head = b"FADT" + bytes([1, 4]) + b"".join(int(d).to_bytes(4, "little") for d in (1, 2, 3, 1))
    assert buf[:22] == head
    assert buf[22:] == b"".join(struct.pack("<d", v) for v in x.ravel())


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(*[st.integers(1, 4)] * 4),
              elements=st.floats(allow_nan=True, allow_infinity=True, width=64)))
def test_tensor_round_trip_bit_exact(tmp_path_factory, x):
    p = tmp_path_factory.mktemp("t") / "x.fadt"
    io.write_tensor(p, x)
    y = io.read_tensor(p)
    assert y.shape == x.shape and y.tobytes() == x.tobytes()


def test_zero_sized_dims_round_trip(tmp_path):
    x = np.zeros((0, 3, 2, 2))
    io.write_tensor(tmp_path / "z.fadt", x)
    assert io.read_tensor(tmp_path / "z.fadt").shape == (0, 3, 2, 2)


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + bytes([2]) + b[5:],
    lambda b: b[:5] + bytes([3]) + b[6:],
    lambda b: b[:-8],
    lambda b: b + b"\0",
    lambda b: b[:10],
])
def test_malformed_tensor_files(tmp_path, mutate):
    p = tmp_path / "bad.fadt"
    p.write_bytes(mutate(io.encode_tensor(np.ones((1, 1, 2, 2)))))
    with pytest.raises(io.FormatError):
        io.read_tensor(p)


def test_rank_checked():
    with pytest.raises(io.FormatError):
        io.encode_tensor(np.zeros((2, 2)))


def test_params_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    params = {"w": rng.normal(size=(3, 2, 3, 3)), "b": rng.normal(size=3), "lam": rng.normal(size=(4, 2))}
    index = io.write_params(tmp_path / "m.fadt", params)
    assert [r["name"] for r in index] == ["w", "b", "lam"]
    back = io.read_params(tmp_path / "m.fadt", index)
    for k in params:
        assert back[k].tobytes() == params[k].tobytes() and back[k].shape == params[k].shape


# ---------------------------------------------------------------- PGM, CSV, config


def test_pgm_is_valid_p5(tmp_path):
    a = np.linspace(-1, 3, 12).reshape(3, 4)
    io.write_pgm(tmp_path / "a.pgm", a)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n4 3\n255\n") and len(raw) == len(b"P5\n4 3\n255\n") + 12
    back = io.read_pgm(tmp_path / "a.pgm")
    assert back[0, 0] == 0.0 and back[-1, -1] == 1.0
    assert np.abs(back - (a + 1) / 4).max() <= 0.5 / 255 + 1e-12


def test_pgm_constant_and_comments(tmp_path):
    io.write_pgm(tmp_path / "c.pgm", np.full((2, 2), 7.0))
    assert np.array_equal(io.read_pgm(tmp_path / "c.pgm"), np.zeros((2, 2)))
    (tmp_path / "d.pgm").write_bytes(b"P5\n# comment\n2 1\n255\n\x00\xff")
    assert io.read_pgm(tmp_path / "d.pgm").tolist() == [[0.0, 1.0]]
    (tmp_path / "e.pgm").write_bytes(b"P2\n2 1\n255\n0 255")
    with pytest.raises(io.FormatError):
        io.read_pgm(tmp_path / "e.pgm")


def test_csv_format(tmp_path):
    io.write_csv(tmp_path / "a.csv", [{"a": 1 / 3, "b": True, "c": 7}], ["a", "b", "c"])
    assert (tmp_path / "a.csv").read_text() == "a,b,c\n0.333333333,true,7\n"
    assert io.read_csv(tmp_path / "a.csv") == [{"a": "0.333333333", "b": "true", "c": "7"}]


def test_config_parse_and_round_trip():
    cfg = io.parse_config("epochs = 3\nuse_adakern = false  # off\nlr=0.5\n", TrainConfig)
    assert cfg.epochs == 3 and cfg.use_adakern is False and cfg.lr == 0.5
    assert io.parse_config(io.format_config(cfg), TrainConfig) == cfg


@pytest.mark.parametrize("text", ["epoch = 3", "epochs = three", "epochs", "lr = 1\nlr = 2",
                                  "use_adadr = maybe", "image_size = 48"])
def test_config_errors(text):
    with pytest.raises(io.ConfigError):
        io.parse_config(text, TrainConfig)


# ---------------------------------------------------------------- CLI


def checker(n):
    yy, xx = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return (-1.0) ** (yy + xx)


def fractions(path):
    return [float(r["fraction"]) for r in io.read_csv(path / "band_power.csv")]


def test_analyze_constant_and_checker(tmp_path):
    io.write_tensor(tmp_path / "c.fadt", np.full((1, 1, 16, 16), 0.5))
    io.write_tensor(tmp_path / "k.fadt", checker(16)[None, None])
    assert main(["analyze", "--input", str(tmp_path / "c.fadt"), "--out", str(tmp_path / "c")]) == 0
    assert main(["analyze", "--input", str(tmp_path / "k.fadt"), "--out", str(tmp_path / "k"), "--s", "8"]) == 0
    assert fractions(tmp_path / "c") == pytest.approx([1, 0, 0, 0], abs=1e-12)
    assert fractions(tmp_path / "k") == pytest.approx([0, 0, 0, 1], abs=1e-12)
    for name in ("hp_map.pgm", "spectrum_summary.csv"):
        assert (tmp_path / "k" / name).is_file()
    io.read_pgm(tmp_path / "k" / "hp_map.pgm")


def test_analyze_reads_pgm(tmp_path):
    io.write_pgm(tmp_path / "k.pgm", checker(16))
    assert main(["analyze", "--input", str(tmp_path / "k.pgm"), "--out", str(tmp_path / "o")]) == 0
    # 0/1 checker: half the power is DC, half at Nyquist
    assert fractions(tmp_path / "o") == pytest.approx([0.5, 0, 0, 0.5], abs=1e-12)


def test_analyze_errors(tmp_path, capsys):
    assert main(["analyze", "--input", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
    (tmp_path / "bad.fadt").write_bytes(b"FADT\x01")
    assert main(["analyze", "--input", str(tmp_path / "bad.fadt"), "--out", str(tmp_path)]) == 2
    io.write_tensor(tmp_path / "ok.fadt", np.zeros((1, 1, 8, 8)))
    assert main(["analyze", "--input", str(tmp_path / "ok.fadt"), "--out", str(tmp_path), "--d-ref", "0"]) == 2


def test_usage_errors():
    assert main([]) == 2
    assert main(["frobnicate"]) == 2


@pytest.mark.parametrize("chain,rf", [("3x1d1", 3), ("3x1d4", 9), ("3x2d1,3x1d2", 11)])
def test_rf_cli(capsys, chain, rf):
    assert main(["rf", "--chain", chain]) == 0
    assert capsys.readouterr().out.strip() == str(rf)


def test_rf_cli_errors(tmp_path):
    assert main(["rf", "--chain", "3x1"]) == 2
    assert main(["rf"]) == 2
    assert main(["rf", "--model", str(tmp_path)]) == 2


def test_gradcheck_cli(capsys):
    assert main(["gradcheck", "--op", "nope"]) == 2
    assert main(["gradcheck", "--op", "relu", "--op", "adadr_loss"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("op,leaf,max_rel_err,result")
    assert "20/20 checks passed" in out  # ten points per op


def _train(tmp_path, name, text=SMALL_CONFIG):
    cfg = tmp_path / f"{name}.txt"
    cfg.write_text(text)
    return main(["train", "--config", str(cfg), "--out", str(tmp_path / name)])


def test_train_cli_outputs_and_determinism(tmp_path, capsys):
    assert _train(tmp_path, "a") == 0
    assert _train(tmp_path, "b") == 0
    a, b = tmp_path / "a", tmp_path / "b"
    for name in ("summary.csv", "train_log.csv", "model.fadt", "model_index.csv", "config.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    for name in ("dilation_map_final_l0.pgm", "dilation_map_final_l1.pgm", "selection_l1_b3.pgm"):
        io.read_pgm(a / name)
    row = io.read_csv(a / "summary.csv")[0]
    assert all(np.isfinite(float(v)) for v in row.values())
    params = io.read_params(a / "model.fadt", io.read_csv(a / "model_index.csv"))
    assert params["l0_w"].shape == (3, 3, 3, 3)
    capsys.readouterr()
    assert main(["rf", "--model", str(a)]) == 0
    rf = int(capsys.readouterr().out)
    assert rf == int(row["rf"])


def test_train_cli_zero_lr_keeps_init_miou(tmp_path):
    assert _train(tmp_path, "z", SMALL_CONFIG + "lr = 0\n") == 0
    row = io.read_csv(tmp_path / "z" / "summary.csv")[0]
    assert row["miou"] == row["init_miou"]


def test_train_cli_config_errors(tmp_path):
    assert _train(tmp_path, "u", SMALL_CONFIG + "learning_rate = 1\n") == 2
    assert main(["train", "--config", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "m")]) == 2


def test_train_cli_divergence_exit_code(tmp_path):
    assert _train(tmp_path, "d", SMALL_CONFIG + "lr = 1e300\n") == 3
    assert (tmp_path / "d" / "train_log.csv").is_file()


def test_demo_constant_input(tmp_path):
    assert main(["demo-aliasing", "--out", str(tmp_path), "--constant"]) == 0
    rows = io.read_csv(tmp_path / "gridding_metric.csv")
    assert [r["layer"] for r in rows] == ["fixed_d4", "fixed_d1", "adaptive"]
    assert all(float(r["metric"]) <= 1e-20 for r in rows)
    for name in ("input.pgm", "response_fixed_d4.pgm", "response_adaptive.pgm", "dilation_map_adaptive.pgm"):
        io.read_pgm(tmp_path / name)
