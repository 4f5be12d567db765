import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coughforest.audio import AudioClip, encode_wav
from coughforest.dataset import (
    FeatureMatrix,
    SampleRecord,
    build_combined,
    count_labels,
    load_manifest,
    materialize,
    parse_label,
    read_feature_csv,
    write_feature_csv,
    write_manifest,
)
from coughforest.errors import ExtractionError, IntegrityError, ManifestError

HEADER = "path,label,dataset,clip_id\n"

# (dataset id, positives, negatives) as listed for the published datasets
TABLE = {
    "cambridge_asym": (141, 298),
    "cambridge_sym": (54, 32),
    "coswara": (185, 1134),
    "coughvid": (680, 680),
    "virufy": (48, 73),
    "nococoda": (73, 0),
}


def synthetic_manifest(dataset, n_pos, n_neg):
    return [SampleRecord(f"/data/{dataset}/{i}.wav", int(i < n_pos), dataset, f"{i:05d}")
            for i in range(n_pos + n_neg)]


def write_wavs(tmp_path, n, seed=0):
    rng = np.random.default_rng(seed)
    lines = [HEADER]
    for i in range(n):
        name = f"clip{i}.wav"
        (tmp_path / name).write_bytes(encode_wav(AudioClip(rng.uniform(-0.5, 0.5, 4000), 22050)))
        lines.append(f"{name},{'positive' if i % 2 else 'negative'},virufy,v{i}\n")
    (tmp_path / "m.csv").write_text("".join(lines))
    return tmp_path / "m.csv"


def test_three_rows(tmp_path):
    for n in ("a", "b", "c"):
        (tmp_path / f"{n}.wav").write_bytes(b"")
    (tmp_path / "m.csv").write_text(
        HEADER + "a.wav,positive,coswara,1\nb.wav,0,coswara,2\nc.wav,NEGATIVE,coswara,3\n")
    recs = load_manifest(tmp_path / "m.csv")
    assert [r.label for r in recs] == [1, 0, 0]
    assert recs[0].path == str(tmp_path / "a.wav")


def test_bad_label_names_row(tmp_path):
    (tmp_path / "m.csv").write_text(HEADER + "a.wav,1,coswara,1\nb.wav,maybe,coswara,2\n")
    with pytest.raises(ManifestError, match="row 3"):
        load_manifest(tmp_path / "m.csv", check_paths=False)


def test_duplicate_clip_id(tmp_path):
    (tmp_path / "m.csv").write_text(HEADER + "a.wav,1,coswara,x\nb.wav,0,coswara,x\n")
    with pytest.raises(IntegrityError):
        load_manifest(tmp_path / "m.csv", check_paths=False)


def test_missing_file_and_bad_header(tmp_path):
    (tmp_path / "m.csv").write_text(HEADER + "nope.wav,1,coswara,x\n")
    with pytest.raises(ManifestError, match="not found"):
        load_manifest(tmp_path / "m.csv")
    (tmp_path / "h.csv").write_text("file,label\n")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "h.csv")


def test_unknown_dataset(tmp_path):
    (tmp_path / "m.csv").write_text(HEADER + "a.wav,1,mystery,x\n")
    with pytest.raises(ManifestError, match="dataset"):
        load_manifest(tmp_path / "m.csv", check_paths=False)


def test_parse_label_tokens():
    assert [parse_label(t) for t in (" Positive", "1", "negative", "0")] == [1, 1, 0, 0]


def test_manifest_roundtrip(tmp_path):
    recs = synthetic_manifest("virufy", 48, 73)
    write_manifest(recs, tmp_path / "m.csv")
    back = load_manifest(tmp_path / "m.csv", check_paths=False)
    assert back == recs
    assert count_labels(back) == (48, 73)
    assert len(back) == 121


def test_published_combined_counts():
    manifests = {k: synthetic_manifest(k, *v) for k, v in TABLE.items()}
    vn = build_combined([manifests["virufy"], manifests["nococoda"]])
    assert count_labels(vn) == (121, 73)
    combined = build_combined([manifests["cambridge_asym"], manifests["cambridge_sym"],
                               manifests["coswara"], manifests["coughvid"], vn])
    assert count_labels(combined) == (1181, 2217)
    assert len(combined) == 3398
    assert combined[0].clip_id == "cambridge_asym:00000"
    assert {r.dataset for r in combined} == set(TABLE)


def test_combined_empty_and_collision():
    assert build_combined([]) == []
    a = [SampleRecord("/x", 1, "coswara", "1")]
    b = [SampleRecord("/y", 0, "coswara", "coswara:1")]
    with pytest.raises(IntegrityError):
        build_combined([a, b])


@settings(max_examples=30)
@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), max_size=6))
def test_combined_counts_are_sums(sizes):
    ids = ["coswara", "coughvid", "virufy", "nococoda", "cambridge_asym", "cambridge_sym"]
    manifests = [synthetic_manifest(ids[i], p, n) for i, (p, n) in enumerate(sizes)]
    pos, neg = count_labels(build_combined(manifests))
    assert pos == sum(p for p, _ in sizes) and neg == sum(n for _, n in sizes)


def test_feature_csv_bit_exact(tmp_path, rng):
    fm = FeatureMatrix(rng.normal(size=(5, 193)) * 1e-7, np.array([0, 1, 0, 1, 1]),
                       np.array(["virufy"] * 5, dtype=object), tuple("abcde"))
    write_feature_csv(fm, tmp_path / "f.csv")
    back = read_feature_csv(tmp_path / "f.csv")
    assert np.array_equal(back.rows, fm.rows)
    assert back.clip_ids == fm.clip_ids and np.array_equal(back.labels, fm.labels)
    header = (tmp_path / "f.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "f000" and header[192] == "f192" and header[193:] == [
        "label", "dataset", "clip_id"]


def test_feature_matrix_validates():
    with pytest.raises(IntegrityError):
        FeatureMatrix(np.zeros((2, 193)), np.array([0]), np.array(["a", "b"]), ("a", "b"))


def test_materialize_and_cache(tmp_path):
    recs = load_manifest(write_wavs(tmp_path, 2))
    cache = tmp_path / "cache.csv"
    fm = materialize(recs, cache)
    assert fm.rows.shape == (2, 193)
    for r in recs:  # cached run must not touch audio
        (tmp_path / r.path).unlink()
    again = materialize(recs, cache)
    assert np.array_equal(again.rows, fm.rows)


def test_materialize_parallel_matches_serial(tmp_path):
    recs = load_manifest(write_wavs(tmp_path, 3, seed=1))
    assert np.array_equal(materialize(recs, n_jobs=2).rows, materialize(recs).rows)


def test_materialize_reports_failures(tmp_path):
    recs = load_manifest(write_wavs(tmp_path, 2))
    (tmp_path / "clip1.wav").write_bytes(b"garbage")
    (tmp_path / "clip0.wav").unlink()
    with pytest.raises(ExtractionError) as info:
        materialize(recs, tmp_path / "cache.csv")
    message = str(info.value)
    assert "clip0.wav" in message and "clip1.wav" in message
    assert not (tmp_path / "cache.csv").exists()
