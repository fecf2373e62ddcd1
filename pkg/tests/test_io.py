import json
import struct

import numpy as np
import pytest

from mvdeepid import io
from mvdeepid.experiment import EpochRecord, RunReport, TrainConfig, compare
from mvdeepid.models import reduced_model


def test_ppm_roundtrip_quantized(tmp_path, rng):
    img = rng.random((55, 47, 3))
    io.write_ppm(tmp_path / "a.ppm", img)
    back = io.read_ppm(tmp_path / "a.ppm")
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12
    io.write_ppm(tmp_path / "b.ppm", back)
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()


def test_ppm_header_comments(tmp_path):
    (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n2 1\n255\n" + bytes([0, 128, 255, 255, 0, 0]))
    img = io.read_ppm(tmp_path / "c.ppm")
    assert img.shape == (1, 2, 3)
    assert img[0, 1].tolist() == [1.0, 0.0, 0.0]


@pytest.mark.parametrize("payload", [b"P3\n1 1\n255\n000", b"P6\n1 1\n65535\n\x00" * 2, b"P6\n1"])
def test_ppm_rejects_bad_files(tmp_path, payload):
    (tmp_path / "x.ppm").write_bytes(payload)
    with pytest.raises(io.FormatError):
        io.read_ppm(tmp_path / "x.ppm")


def test_dataset_roundtrip(tmp_path, aug_small):
    io.save_dataset(aug_small, tmp_path / "d")
    back = io.load_dataset(tmp_path / "d")
    assert len(back) == len(aug_small) and back.augmented and back.num_identities == 4
    for a, b in zip(aug_small.records, back.records):
        assert (a.identity, a.view, a.instance, a.split) == (b.identity, b.view, b.instance, b.split)
        assert np.abs(a.image - b.image).max() <= 0.5 / 255 + 1e-12
    header = (tmp_path / "d" / "manifest.csv").read_text().splitlines()[0]
    assert header == "identity,view,instance,split,path"


def test_dataset_bad_row_named(tmp_path, raw_small):
    io.save_dataset(raw_small, tmp_path / "d")
    manifest = tmp_path / "d" / "manifest.csv"
    lines = manifest.read_text().splitlines()
    lines[3] = lines[3].replace(",train,", ",holdout,")
    manifest.write_text("\n".join(lines) + "\n")
    with pytest.raises(io.FormatError, match="row 4"):
        io.load_dataset(tmp_path / "d")


def test_checkpoint_roundtrip_exact(tmp_path):
    for kind in ("baseline", "mv", "m2"):
        m = reduced_model(kind, 3)
        m.freeze_conv = kind == "m2"
        path = tmp_path / f"{kind}.bin"
        io.save_checkpoint(m, path, seed_chain=[3])
        back = io.load_checkpoint(path)
        assert back.kind == kind and back.view_order == m.view_order and back.freeze_conv == m.freeze_conv
        for name, arr in m.named_params().items():
            assert np.array_equal(arr, back.named_params()[name]), name
        header = io.read_checkpoint_header(path)
        assert header["seed_chain"] == [3] and header["widths"] == list(m.widths)


def test_checkpoint_layout(tmp_path):
    m = reduced_model("mv", 0)
    io.save_checkpoint(m, tmp_path / "c.bin")
    data = (tmp_path / "c.bin").read_bytes()
    (n,) = struct.unpack_from("<Q", data)
    header = json.loads(data[8:8 + n])
    assert list(header) == sorted(header)
    first = header["tensors"][0]
    arr = np.frombuffer(data, dtype="<f8", count=first["nbytes"] // 8, offset=8 + n + first["offset"])
    assert np.array_equal(arr.reshape(first["shape"]), m.named_params()[first["name"]])


def test_checkpoint_shape_mismatch_rejected(tmp_path):
    m = reduced_model("mv", 0)
    path = tmp_path / "c.bin"
    io.save_checkpoint(m, path)
    data = path.read_bytes()
    (n,) = struct.unpack_from("<Q", data)
    header = json.loads(data[8:8 + n])
    header["tensors"][0]["shape"] = [9, 9, 9, 9]
    hb = json.dumps(header, sort_keys=True).encode()
    path.write_bytes(struct.pack("<Q", len(hb)) + hb + data[8 + n:])
    with pytest.raises(io.FormatError, match="shape"):
        io.load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "c.bin"
    io.save_checkpoint(reduced_model("baseline", 0), path)
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(io.FormatError, match="past end"):
        io.load_checkpoint(path)


def _report(kind):
    cfg = TrainConfig(kind, num_classes=3, epochs=2)
    return RunReport(cfg, [EpochRecord(1, 0.5, 0.75, 0.75, 1.25), EpochRecord(2, 0.25, 0.5, 0.5, 0.5)],
                     {"train": 0.75, "valid": 0.5, "test": 0.5}, aggregation_dim=2880)


def test_report_and_curve_files(tmp_path):
    rep = _report("mv")
    io.save_report(rep, tmp_path / "r.json")
    assert io.load_report(tmp_path / "r.json").to_dict() == rep.to_dict()
    io.save_curve_csv(rep, tmp_path / "curve.csv")
    lines = (tmp_path / "curve.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_err,valid_err,test_err,train_loss"
    assert lines[2] == "2,0.25,0.5,0.5,0.5"


def test_comparison_csv(tmp_path):
    table = compare({k: _report(k) for k in ("baseline", "mv", "m2")})
    io.save_comparison_csv(table, tmp_path / "t.csv")
    rows = io.read_comparison_csv(tmp_path / "t.csv")
    assert rows == [[str(c) for c in r] for r in table.rows()]
