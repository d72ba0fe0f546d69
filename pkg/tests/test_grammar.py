import json

import numpy as np
import pytest

from pltig.corpus import Vocabulary
from pltig.errors import ConfigError
from pltig.grammar import (TemplateConfig, TreeKind, build_template, init_params, load_model, model_to_dict,
                           param_count, save_model, uniform_params, validate)

from conftest import TEMPLATES


def _vocab(n):
    return Vocabulary([f"t{i}" for i in range(n)])


@pytest.mark.parametrize("V,tpl,count", [(32, "L2R1", 6402), (32, "L2R2", 8514),
                                          (48, "L2R1", 14210), (48, "L2R2", 18914)])
def test_reference_parameter_counts(V, tpl, count):
    assert param_count(build_template(_vocab(V), TemplateConfig.parse(tpl))) == count


def test_template_parsing():
    assert TemplateConfig.parse("l2r1") == TemplateConfig.lnrm(2, 1)
    assert TemplateConfig.parse("bigram").K == 1
    for bad in ("L0R0", "X1", "L-1R2"):
        with pytest.raises(ConfigError):
            TemplateConfig.parse(bad)
    with pytest.raises(ConfigError):
        TemplateConfig("bigram", 1, 1)


def test_lnrm_structure():
    g = build_template(Vocabulary(["a", "b"]), TemplateConfig.lnrm(2, 1))
    assert len(g.trees) == 5 and g.initial == 0
    assert [g.trees[t].kind for t in g.left_trees] == [TreeKind.LEFT] * 2
    tree = g.trees[g.left_trees[0]]
    assert tree.depth == 2
    assert [(n.has_left_site, n.has_right_site) for n in tree.spine] == [(True, True), (True, False)]
    assert not tree.root.has_left_site and not tree.root.has_right_site
    assert tree.anchor_node.label == "a" and tree.foot.is_foot
    init = g.trees[0]
    assert init.anchor_node.is_empty and init.foot is None
    assert init.spine[0].has_left_site and init.spine[0].has_right_site
    # every auxiliary tree carries K sites
    assert all(t.sites == 3 for t in g.trees[1:])


def test_bigram_structure():
    g = build_template(Vocabulary(["a", "b", "c"]), TemplateConfig.bigram())
    assert not g.left_trees and len(g.right_trees) == 3
    assert all(t.sites == 1 and t.spine[0].has_right_site for t in g.trees)


def test_node_ids_unique():
    g = build_template(_vocab(4), TemplateConfig.lnrm(2, 2))
    ids = [n.id for n in g.nodes()]
    assert len(ids) == len(set(ids))


@pytest.mark.parametrize("name", TEMPLATES)
def test_init_params_validate(name):
    g = build_template(_vocab(3), TemplateConfig.parse(name))
    for p in (init_params(g, 4), uniform_params(g)):
        assert validate(g, p) == []
        assert np.all(p.left[g.has_left] > 0) and np.all(p.right[g.has_right] > 0)


def test_validate_reports_problems():
    g = build_template(_vocab(2), TemplateConfig.lnrm(1, 1))
    p = init_params(g, 0)
    p.left[1, 0, 1] += 0.25
    p.start[2] = 0.5
    problems = validate(g, p)
    assert any("sums to" in x for x in problems)
    assert any("auxiliary tree" in x for x in problems)


@pytest.mark.parametrize("name", ["bigram", "L2R1"])
def test_model_file_round_trip(tmp_path, name):
    g = build_template(_vocab(3), TemplateConfig.parse(name))
    p = init_params(g, 9)
    path = tmp_path / "m.json"
    save_model(path, g, p, {"note": "x"})
    g2, p2 = load_model(path)
    assert p2 == p
    assert g2.config == g.config and g2.vocab == g.vocab
    # load then save is value-identical
    save_model(tmp_path / "n.json", g2, p2, {"note": "x"})
    assert (tmp_path / "n.json").read_text() == path.read_text()


def test_model_file_rejects_tampering(tmp_path):
    g = build_template(_vocab(2), TemplateConfig.lnrm(1, 1))
    doc = model_to_dict(g, init_params(g, 0))
    doc["trees"][1]["anchor"] = "zzz"
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        load_model(path)
    doc["format"] = "other"
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        load_model(path)
