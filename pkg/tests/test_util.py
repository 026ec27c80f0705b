import argparse
import json
import math
import pytest

import numpy as np

from sham_meta import util
from sham_meta.util import ValidationError


class Target:
    pass


class TestUtil:

    def test_to_float(self):
        assert util.to_float("0.5") == 0.5
        assert util.to_float(3) == 3.0
        # infinity spellings
        for s in ["inf", "Inf", "+infinity", " Infinity "]:
            assert util.to_float(s) == math.inf
        assert util.to_float("-inf") == -math.inf
        with pytest.raises(ValidationError):
            util.to_float("abc")
        with pytest.raises(ValidationError):
            util.to_float(None)

    def test_to_int(self):
        assert util.to_int("32") == 32
        assert util.to_int(32.0) == 32
        assert util.to_int("32.0") == 32
        with pytest.raises(ValidationError):
            util.to_int(32.5)
        with pytest.raises(ValidationError):
            util.to_int(2.7)
        with pytest.raises(ValidationError):
            util.to_int("7.9")
        assert util.to_int(" 7 ") == 7
        with pytest.raises(ValidationError):
            util.to_int("inf")
        with pytest.raises(ValidationError):
            util.to_int(True)

    def test_set_attr_from_dict(self):
        t = Target()
        util.set_attr_from_dict({"a": "1", "c": ""}, t, [("a", util.to_int)],
                                [("b", util.to_float, 0.5), ("c", str, "default")])
        assert (t.a, t.b, t.c) == (1, 0.5, "default")
        # required key missing
        with pytest.raises(ValidationError, match="a: missing"):
            util.set_attr_from_dict({}, Target(), [("a", util.to_int)], [])
        # conversion failure names the field
        with pytest.raises(ValidationError, match="b:"):
            util.set_attr_from_dict({"b": "x"}, Target(), [], [("b", util.to_float, 0)])

    def test_schema_version(self, tmp_path):
        util.check_schema_version({})
        util.check_schema_version({"schema_version": 1})
        with pytest.raises(ValidationError, match="schema_version"):
            util.check_schema_version({"schema_version": 2})

        path = tmp_path / "config.json"
        path.write_text(json.dumps({"schema_version": 1, "chains": 2}))
        assert util.read_json_config(path)["chains"] == 2
        path.write_text("[1, 2]")
        with pytest.raises(ValidationError, match="JSON object"):
            util.read_json_config(path)
        path.write_text("{chains: 2}")
        with pytest.raises(ValidationError, match="invalid JSON"):
            util.read_json_config(path)
        with pytest.raises(ValidationError, match="can not read"):
            util.read_json_config(tmp_path / "missing.json")

    def test_make_rng(self):
        a = util.make_rng(1, 0).random(5)
        assert np.array_equal(a, util.make_rng(1, 0).random(5))
        # different stream keys give different streams
        assert not np.array_equal(a, util.make_rng(1, 1).random(5))
        assert not np.array_equal(a, util.make_rng(2, 0).random(5))
        assert not np.array_equal(util.make_rng(1, 0, 1).random(5),
                                  util.make_rng(1, 1, 0).random(5))

    def test_progress_bar(self, capsys):
        for i in range(20):
            util.progress_bar(i, 20)
        assert capsys.readouterr().out.endswith("[##########]\n")

    def test_set_options_from_config(self, tmp_path):
        ns = argparse.Namespace(seed=2)
        # create dummy config:
        """
        model = configs/model.json

        # comment
        seed =1
        transform = ["mu_theta=exp"]
        """
        (tmp_path / "config.cfg").write_text(
            'model = configs/model.json\n\n#comment\nseed =1\ntransform = ["mu_theta=exp"]')
        # no config: no update
        util.set_options_from_config(ns, verbose=False)
        assert ns.seed == 2

        # config without parser: simple update, no check
        ns.config = tmp_path / "config.cfg"
        util.set_options_from_config(ns, verbose=False)
        assert ns.seed == 1
        assert ns.model == "configs/model.json"
        assert ns.transform == ["mu_theta=exp"]

        # config with parser: check validity of options
        ns = argparse.Namespace(seed=2, config=tmp_path / "config.cfg")
        parser = argparse.ArgumentParser()
        # unknown option
        with pytest.raises(ValidationError, match="Unknown option"):
            util.set_options_from_config(ns, check=parser, verbose=False)
        # add options, but wrong type of model
        parser.add_argument("--model", type=int)
        parser.add_argument("--seed", type=int)
        parser.add_argument("--transform", action="append")
        with pytest.raises(ValidationError, match="Failed check model"):
            util.set_options_from_config(ns, check=parser, verbose=False)
        # fix option type
        parser._actions[-3].type = str
        util.set_options_from_config(ns, check=parser, verbose=False)
        assert ns.seed == 1
        assert ns.model == "configs/model.json"
        assert ns.transform == ["mu_theta=exp"]
        # check choices
        parser._actions[-2].choices = [2, 3]
        with pytest.raises(ValidationError, match="Failed check seed"):
            util.set_options_from_config(ns, check=parser, verbose=False)

    def test_config_line_without_value(self, tmp_path):
        (tmp_path / "config.cfg").write_text("seed\n")
        ns = argparse.Namespace(config=tmp_path / "config.cfg")
        with pytest.raises(ValidationError, match="line 1"):
            util.set_options_from_config(ns, verbose=False)
