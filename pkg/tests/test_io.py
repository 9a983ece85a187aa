import json
import struct

import numpy as np
import pytest

from pedretrieval import Gallery, Query, brute_force_retrieve, build_index, part_boxes
from pedretrieval.errors import ChecksumMismatch, DataFormatError
from pedretrieval import io

from conftest import random_gallery


def test_gallery_round_trip_bit_exact(tmp_path, rng):
    g = random_gallery(rng, 25, 7, labels=[f"p{i % 4}" for i in range(25)])
    io.write_gallery(tmp_path / "g.bin", g)
    back = io.read_gallery(tmp_path / "g.bin")
    assert np.array_equal(back.ids, g.ids)
    assert back.descriptors.tobytes() == g.descriptors.tobytes()
    assert back.labels == g.labels
    assert back.checksum() == g.checksum()


@pytest.mark.parametrize("labels", [None, (1, 2, 3), ("a", "ü", "")])
def test_label_kinds(labels):
    ids = np.array([5, 6, 7])
    x = np.arange(6, dtype=np.float64).reshape(3, 2)
    got_ids, got_x, got_labels = io.decode_descriptors(io.encode_descriptors(ids, x, labels))
    assert got_ids.tolist() == [5, 6, 7] and np.array_equal(got_x, x)
    assert got_labels == (None if labels is None else tuple(labels))


def test_header_layout():
    data = io.encode_descriptors([1], [[1.0, 2.0]])
    magic, version, _, dim, count = struct.unpack_from("<4sHHII", data)
    assert (magic, version, dim, count) == (b"GLDV", 1, 2, 1)
    assert len(data) == 16 + 8 + 8


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b"XXXX" + b[4:],
        lambda b: b[:-3],
        lambda b: b[:4] + struct.pack("<H", 99) + b[6:],
        lambda b: b[:10],
    ],
)
def test_corrupt_descriptor_file(mutate):
    data = io.encode_descriptors([1, 2], [[1.0], [2.0]], ("a", "b"))
    with pytest.raises(DataFormatError):
        io.decode_descriptors(mutate(data))


def test_duplicate_ids_rejected_on_read(tmp_path):
    (tmp_path / "g.bin").write_bytes(io.encode_descriptors([1, 1], [[0.0], [1.0]]))
    with pytest.raises(DataFormatError):
        io.read_gallery(tmp_path / "g.bin")


def test_queries_round_trip(tmp_path):
    qs = [Query([1.0, 2.0], label="a", query_id=3), Query([0.5, 0.25], label="b", query_id=9)]
    io.write_queries(tmp_path / "q.bin", qs)
    back = io.read_queries(tmp_path / "q.bin")
    assert [(q.query_id, q.label) for q in back] == [(3, "a"), (9, "b")]
    assert np.array_equal(back[1].descriptor, [0.5, 0.25])


def test_feature_map_round_trip(tmp_path, rng):
    stack = rng.normal(size=(3, 4, 5)).astype(np.float32)
    io.write_feature_maps(tmp_path / "f.bin", stack)
    assert np.array_equal(io.read_feature_maps(tmp_path / "f.bin"), stack)
    (tmp_path / "bad.bin").write_bytes((tmp_path / "f.bin").read_bytes()[:-4])
    with pytest.raises(DataFormatError):
        io.read_feature_maps(tmp_path / "bad.bin")


def test_keypoints_csv(tmp_path):
    p = tmp_path / "kp.csv"
    p.write_text("id,x1,y1,x2,y2,x3,y3,x4,y4,W,H\nimg0,50,10,50,40,40,120,60,120,100,200\n")
    [(image_id, kp)] = io.read_keypoints(p)
    assert image_id == "img0" and kp.width == 100 and kp.height == 200
    io.write_part_boxes(tmp_path / "boxes.csv", [(image_id, part_boxes(kp))])
    rows = (tmp_path / "boxes.csv").read_text().splitlines()
    assert rows[0] == "id,region,x0,y0,x1,y1,alpha"
    assert [r.split(",")[1] for r in rows[1:]] == ["head", "upper_body", "lower_body"]


def test_keypoints_bad_row(tmp_path):
    p = tmp_path / "kp.csv"
    p.write_text("img0,1,2,3\n")
    with pytest.raises(DataFormatError):
        io.read_keypoints(p)


def test_results_format(tmp_path, rng):
    g = random_gallery(rng, 5, 3)
    r = brute_force_retrieve(rng.normal(size=3), g)
    line = io.format_results_line("q7", r)
    head, *pairs = line.split()
    assert head == "q7" and len(pairs) == 5
    io.write_results(tmp_path / "r.txt", ["q7"], [r])
    [(qid, ranked)] = io.read_results(tmp_path / "r.txt")
    assert qid == "q7" and [s for s, _ in ranked] == r.ids.tolist()
    np.testing.assert_allclose([d for _, d in ranked], r.distances, rtol=1e-8)


def test_index_round_trip(tmp_path, rng):
    g = random_gallery(rng, 60, 6)
    idx = build_index(g, 2.0, 3)
    io.save_index(tmp_path / "idx", idx)
    back = io.load_index(tmp_path / "idx", g)
    assert back.theta == idx.theta and len(back) == len(idx)
    assert all(np.array_equal(a.members, b.members) for a, b in zip(idx.groups, back.groups))
    assert np.array_equal(back.group_descriptors_reduced, idx.group_descriptors_reduced)
    assert np.array_equal(back.pca.components, idx.pca.components)


def test_index_rejects_other_gallery(tmp_path, rng):
    g = random_gallery(rng, 20, 3)
    io.save_index(tmp_path / "idx", build_index(g, 1.0, 3))
    other = Gallery(g.ids, g.descriptors + 1.0)
    with pytest.raises(ChecksumMismatch):
        io.load_index(tmp_path / "idx", other)


def test_index_version_gate(tmp_path, rng):
    g = random_gallery(rng, 10, 2)
    io.save_index(tmp_path / "idx", build_index(g, 1.0, 2))
    m = tmp_path / "idx" / "manifest.json"
    manifest = json.loads(m.read_text())
    manifest["format_version"] = 999
    m.write_text(json.dumps(manifest))
    with pytest.raises(DataFormatError):
        io.load_index(tmp_path / "idx", g)
