#!/usr/bin/env python3
"""Smoke test for the snri_py extension module.

Builds the cdylib with cargo (release), copies it next to this script
under the importable name, then drives a small end-to-end flow:
generate a synthetic dataset, train a few epochs, evaluate, and check
the ranking metrics against hand values.
"""

import json
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
BUILD_DIR = Path(__file__).resolve().parent / "_build"


def build_extension() -> Path:
    subprocess.run(
        ["cargo", "build", "-p", "snri-py", "--release"],
        cwd=REPO,
        check=True,
    )
    src = REPO / "target" / "release" / "libsnri_py.so"
    if not src.exists():  # e.g. macOS
        src = REPO / "target" / "release" / "libsnri_py.dylib"
    BUILD_DIR.mkdir(exist_ok=True)
    dst = BUILD_DIR / "snri_py.so"
    shutil.copy2(src, dst)
    return dst


def main() -> None:
    build_extension()
    sys.path.insert(0, str(BUILD_DIR))
    import snri_py

    print("module:", snri_py.__name__)

    # metrics against hand values
    assert snri_py.auc_pr([1.0], [2.0]) == 0.5
    assert snri_py.auc_pr([3.0, 2.0], [1.0, 0.0]) == 1.0
    assert snri_py.hits_at(1.0, [0.0] * 50) == 1
    assert snri_py.hits_at(1.0, [2.0] * 10 + [0.0] * 40) == 0
    print("metrics: ok")

    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        snri_py.generate_synthetic(root, name="toy", entities=200, test_entities=80, seed=7)
        ds = snri_py.load_dataset(root, "toy")
        rels, nodes, triples = ds.train_stats()
        assert rels == 5, f"expected 5 relations, got {rels}"
        assert nodes > 100 and triples > 200
        assert ds.num_valid_triples() > 0 and ds.num_test_triples() > 0
        assert "rule_head" in ds.relation_names()
        print(f"dataset: {rels} relations, {nodes} nodes, {triples} triples")

        # subgraph extraction around an existing rule fact
        report_triple = None
        for line in (root / "toy" / "valid.txt").read_text().splitlines():
            h, r, t = line.split("\t")
            if r == "rule_head":
                report_triple = (h, r, t)
                break
        assert report_triple is not None
        h, r, t = report_triple
        sg = ds.extract_subgraph(h, t, hops=2)
        assert h in sg["nodes"] and t in sg["nodes"]
        assert len(sg["dist_to_head"]) == len(sg["nodes"])
        assert sg["dist_to_head"][sg["nodes"].index(h)] == 0
        print(f"subgraph around ({h}, {t}): {len(sg['nodes'])} nodes, {len(sg['edges'])} edges")

        toks = ds.neighboring_relations(h)
        assert len(toks) > 0
        print(f"neighboring relation tokens of {h}: {toks}")

        model = snri_py.train_model(ds, epochs=3, seed=1, hops=1, embed_dim=16)
        print(f"trained: {model.num_parameters()} parameters")

        result = model.evaluate(ds, candidates=20, seed=1)
        assert 0.0 <= result["auc_pr"] <= 1.0
        assert 0.0 <= result["hits_at_10"] <= 1.0
        full = json.loads(result["report_json"])
        assert len(full["buckets"]) == 3
        print(f"eval: AUC-PR {result['auc_pr']:.4f}, Hits@10 {result['hits_at_10']:.4f}")

        score = model.score(ds, h, r, t, test=False)
        assert math.isfinite(score)

        ckpt = root / "model.bin"
        model.save(ckpt)
        back = snri_py.load_model(ckpt)
        assert back.score(ds, h, r, t, test=False) == score
        print("checkpoint round-trip: ok")

    print("smoke test: PASS")


if __name__ == "__main__":
    main()
