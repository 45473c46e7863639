import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtcomplete.cli import main
from mtcomplete.fileio import (
    BadMagicError,
    BadMaskValueError,
    ExtentOverflowError,
    TrailingDataError,
    TruncatedError,
    VersionError,
    read_mask,
    read_tensor,
    tensor_bytes,
    write_mask,
    write_tensor,
)


def header(magic, order, extents, version=1):
    return magic + struct.pack("<II", version, order) + struct.pack(f"<{order}Q", *extents)


def test_layout_is_little_endian_first_index_fastest():
    t = np.array([[1.0, 3.0, 5.0], [2.0, 4.0, 6.0]])
    raw = tensor_bytes(t)
    assert raw[:4] == b"DTEN"
    assert struct.unpack_from("<II2Q", raw, 4) == (1, 2, 2, 3)
    assert struct.unpack_from("<6d", raw, 28) == (1, 2, 3, 4, 5, 6)
    assert len(raw) == 8 + 4 + 8 * 2 + 8 * 6


@settings(max_examples=100, deadline=None)
@given(shape=st.lists(st.integers(1, 6), min_size=1, max_size=5), seed=st.integers(0, 2**32 - 1))
def test_tensor_and_mask_round_trip(tmp_path_factory, shape, seed):
    d = tmp_path_factory.mktemp("rt")
    rng = np.random.default_rng(seed)
    t = rng.standard_normal(shape)
    w = rng.random(shape) < 0.5
    write_tensor(d / "t.dten", t)
    write_mask(d / "w.dmsk", w)
    back = read_tensor(d / "t.dten")
    assert back.shape == t.shape and back.tobytes() == t.tobytes()
    assert np.array_equal(read_mask(d / "w.dmsk"), w)


def test_special_values_round_trip(tmp_path):
    t = np.array([0.0, -0.0, np.inf, -np.inf, np.nan, 5e-324, 1.7976931348623157e308])
    write_tensor(tmp_path / "t", t)
    assert read_tensor(tmp_path / "t").tobytes() == t.tobytes()


def test_bad_magic(tmp_path):
    (tmp_path / "f").write_bytes(header(b"XXXX", 1, [1]) + struct.pack("<d", 1.0))
    with pytest.raises(BadMagicError, match="bad magic"):
        read_tensor(tmp_path / "f")


def test_mask_magic_not_accepted_as_tensor(tmp_path):
    write_mask(tmp_path / "w", np.ones(3, bool))
    with pytest.raises(BadMagicError):
        read_tensor(tmp_path / "w")


def test_truncated_payload(tmp_path):
    (tmp_path / "f").write_bytes(header(b"DTEN", 2, [2, 3]) + struct.pack("<5d", *range(5)))
    with pytest.raises(TruncatedError, match="needs 6 values, found 5"):
        read_tensor(tmp_path / "f")


def test_truncated_extents(tmp_path):
    (tmp_path / "f").write_bytes(b"DTEN" + struct.pack("<II", 1, 3) + struct.pack("<Q", 2))
    with pytest.raises(TruncatedError, match="extents"):
        read_tensor(tmp_path / "f")


def test_bad_version(tmp_path):
    (tmp_path / "f").write_bytes(header(b"DTEN", 1, [1], version=2) + struct.pack("<d", 1.0))
    with pytest.raises(VersionError, match="version 2"):
        read_tensor(tmp_path / "f")


def test_extent_overflow(tmp_path):
    (tmp_path / "f").write_bytes(header(b"DTEN", 2, [2**40, 2**40]))
    with pytest.raises(ExtentOverflowError):
        read_tensor(tmp_path / "f")


def test_trailing_bytes(tmp_path):
    (tmp_path / "f").write_bytes(header(b"DTEN", 1, [1]) + struct.pack("<2d", 1.0, 2.0))
    with pytest.raises(TrailingDataError):
        read_tensor(tmp_path / "f")


def test_mask_bytes_must_be_binary(tmp_path):
    (tmp_path / "w").write_bytes(header(b"DMSK", 1, [3]) + bytes([0, 1, 2]))
    with pytest.raises(BadMaskValueError):
        read_mask(tmp_path / "w")


def test_error_messages_distinct(tmp_path):
    cases = {
        "magic": header(b"XXXX", 1, [1]) + bytes(8),
        "trunc": header(b"DTEN", 1, [2]) + bytes(8),
        "version": header(b"DTEN", 1, [1], version=9) + bytes(8),
        "overflow": header(b"DTEN", 2, [2**40, 2**40]),
    }
    kinds, messages = set(), set()
    for name, raw in cases.items():
        (tmp_path / name).write_bytes(raw)
        with pytest.raises(ValueError) as info:
            read_tensor(tmp_path / name)
        kinds.add(type(info.value))
        messages.add(str(info.value).split(": ", 1)[1][:12])
    assert len(kinds) == len(messages) == 4


# -- CLI ----------------------------------------------------------------------

def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def pipeline(tmp_path):
    """Synth two coupled tensors and mask them; returns the run config dict."""
    spec = {
        "shapes": [[6, 5, 4], [6, 3, 4]],
        "ranks": [[2, 2, 2], [2, 2, 2]],
        "shared": [[[0, 0], [1, 0]]],
        "noise_sigma": 0.0,
        "seed": 5,
        "outputs": ["x0.dten", "x1.dten"],
    }
    (tmp_path / "synth.json").write_text(json.dumps(spec))
    assert main(["synth", str(tmp_path / "synth.json")]) == 0
    for k in range(2):
        assert main(["mask", str(tmp_path / f"x{k}.dten"), "--fraction", "0.5",
                     "--seed", str(k), "-o", str(tmp_path / f"w{k}.dmsk")]) == 0
    config = {
        "tensors": ["x0.dten", "x1.dten"],
        "masks": ["w0.dmsk", "w1.dmsk"],
        "groups": [[[0, 0], [1, 0]], [[0, 1]], [[0, 2]], [[1, 1]], [[1, 2]]],
        "ranks": [2, 2, 2, 2, 2],
        "lambda": 0.01,
        "max_sweeps": 1,
        "rel_tolerance": 0.0,
        "init": "random",
        "seed": 3,
        "outputs": ["y0.dten", "y1.dten"],
        "report": "report.txt",
    }
    return tmp_path, config


def write_config(d, config):
    (d / "run.json").write_text(json.dumps(config))
    return d / "run.json"


def test_complete_one_sweep(pipeline, capsys):
    d, config = pipeline
    code, _, err = run(["complete", write_config(d, config)], capsys)
    assert code == 0, err
    assert read_tensor(d / "y0.dten").shape == (6, 5, 4)
    assert read_tensor(d / "y1.dten").shape == (6, 3, 4)
    report = (d / "report.txt").read_text().splitlines()
    assert report[0] == "sweeps_run 1"
    trace = report[report.index("objective_trace") + 1:]
    assert len(trace) == 1


def test_complete_keeps_observed_entries(pipeline, capsys):
    d, config = pipeline
    config["max_sweeps"] = 5
    assert run(["complete", write_config(d, config)], capsys)[0] == 0
    x, w, y = read_tensor(d / "x0.dten"), read_mask(d / "w0.dmsk"), read_tensor(d / "y0.dten")
    assert y[w].tobytes() == x[w].tobytes()


def test_complete_bad_alpha(pipeline, capsys):
    d, config = pipeline
    config["alpha"] = [[0.3, 0.3, 0.3], [0.5, 0.25, 0.25]]
    code, _, err = run(["complete", write_config(d, config)], capsys)
    assert code == 2
    assert "tensor 0" in err
    assert not (d / "y0.dten").exists()


def test_complete_missing_tensor_file(pipeline, capsys):
    d, config = pipeline
    config["tensors"][1] = "nope.dten"
    code, _, _ = run(["complete", write_config(d, config)], capsys)
    assert code == 3
    assert not (d / "y0.dten").exists()


def test_complete_missing_config(tmp_path, capsys):
    assert run(["complete", tmp_path / "absent.json"], capsys)[0] == 3


def test_complete_unknown_field(pipeline, capsys):
    d, config = pipeline
    config["lamda"] = 1.0
    code, _, err = run(["complete", write_config(d, config)], capsys)
    assert code == 2 and "lamda" in err


def test_complete_default_lambda_and_ranks(pipeline, capsys):
    d, config = pipeline
    del config["lambda"], config["ranks"]
    assert run(["complete", write_config(d, config)], capsys)[0] == 0
    report = (d / "report.txt").read_text()
    assert "lambda " in report


def test_eval_outputs(pipeline, capsys):
    d, _ = pipeline
    code, out, _ = run(["eval", d / "x0.dten", d / "x0.dten"], capsys)
    assert code == 0 and out == "0.00000\n"
    write_tensor(d / "zero.dten", np.zeros((6, 5, 4)))
    code, out, _ = run(["eval", d / "zero.dten", d / "x0.dten"], capsys)
    assert out == "1.00000\n"


def test_eval_significant_digits(tmp_path, capsys):
    write_tensor(tmp_path / "t", np.array([3.0, 4.0]))
    write_tensor(tmp_path / "e", np.array([3.0, 4.0 + 0.0617283]))
    _, out, _ = run(["eval", tmp_path / "e", tmp_path / "t"], capsys)
    assert out == "0.0123457\n"


def test_eval_shape_mismatch(tmp_path, capsys):
    write_tensor(tmp_path / "a", np.ones(3))
    write_tensor(tmp_path / "b", np.ones(4))
    assert run(["eval", tmp_path / "a", tmp_path / "b"], capsys)[0] == 2


def test_mask_fraction_zero(tmp_path, capsys):
    write_tensor(tmp_path / "t", np.ones((3, 4)))
    assert run(["mask", tmp_path / "t", "--fraction", "0", "-o", tmp_path / "w"], capsys)[0] == 0
    raw = (tmp_path / "w").read_bytes()
    assert raw[:4] == b"DMSK"
    assert raw[28:] == bytes([1] * 12)


def test_mask_bad_fraction(tmp_path, capsys):
    write_tensor(tmp_path / "t", np.ones((3, 4)))
    code, _, _ = run(["mask", tmp_path / "t", "--fraction", "2", "-o", tmp_path / "w"], capsys)
    assert code == 2
    assert not (tmp_path / "w").exists()


def test_corrupt_input_is_invalid(tmp_path, capsys):
    (tmp_path / "t").write_bytes(b"junk")
    assert run(["eval", tmp_path / "t", tmp_path / "t"], capsys)[0] == 2


def test_no_temp_files_left_on_error(pipeline, capsys):
    d, config = pipeline
    config["alpha"] = [[1.0, 1.0, 1.0], [1.0, 0.0, 0.0]]
    run(["complete", write_config(d, config)], capsys)
    assert not list(d.glob(".*.tmp"))
