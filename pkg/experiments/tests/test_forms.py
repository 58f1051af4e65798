import json
import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from cluster.core import NumaResources
from experiments.exceptions import ConfigError
from experiments.forms import WARM_START_GRID, load_config, resolve_config, scenario_from
from experiments.utils import run_trace, write_manifest
from learning.features import Encoding
from traces.utils import ScenarioMode, warm_start

EXAMPLE_CONFIG = Path(__file__).resolve().parents[2] / "configs" / "example.json"


class LoadConfigTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, data, name="config.json"):
        path = self.dir / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    def test_defaults(self):
        config = load_config()
        self.assertEqual(config.scenario.n_pms_initial, 5)
        self.assertEqual(config.scenario.pm_capacity, NumaResources(32, 64))
        self.assertEqual(config.agent.gamma, 0.75)
        self.assertEqual(config.agent.batch_size, 2048)
        self.assertEqual(config.agent.hidden, 128)
        self.assertEqual(config.agent.encoding, Encoding.LOOK_AHEAD)
        self.assertEqual(config.candidate_filter.k, 5)
        self.assertTrue(config.candidate_filter.enabled)
        self.assertEqual(config["compare"]["warm_starts"], WARM_START_GRID)
        self.assertEqual(config["scheduler"]["policy"], "best_fit")
        self.assertIsNone(config["trace"]["path"])

    def test_overrides_win_over_file(self):
        path = self.write({"scenario": {"n_pms_initial": 8, "seed": 1}, "agent": {"epochs": 10}})
        config = load_config(path, {"seed": 4, "pms": 3, "warm_start": 0.5, "epochs": None})
        self.assertEqual(config.scenario.n_pms_initial, 3)
        self.assertEqual(config.scenario.warm_start_ratio, 0.5)
        self.assertEqual(config.scenario.seed, 4)
        self.assertEqual(config["trace"]["seed"], 4)
        self.assertEqual(config.agent.seed, 4)
        self.assertEqual(config.agent.epochs, 10)

    def test_filter_k_reaches_agent(self):
        config = load_config(self.write({"filter": {"k": 7, "split": [4, 3]}}))
        self.assertEqual(config.agent.k, 7)
        self.assertEqual(config.candidate_filter.split, (4, 3))

    def test_expansion_needs_cap(self):
        with self.assertRaises(ConfigError) as cm:
            load_config(overrides={"mode": "expansion"})
        self.assertIn("scenario.n_pms_max", cm.exception.errors)

        config = load_config(self.write({"scenario": {"mode": "expansion", "n_pms_initial": 5, "n_pms_max": 8}}))
        self.assertEqual(config.scenario.mode, ScenarioMode.EXPANSION)
        self.assertEqual(config.scenario.n_pms_max, 8)

    def test_invalid_sections(self):
        bad_configs = [
            {"unknown": {}},
            {"scenario": {"n_pms": 5}},
            {"scenario": {"warm_start_ratio": 1.0}},
            {"scenario": {"pm_capacity": {"cpu": 0, "mem": 4}}},
            {"scheduler": {"policy": "round_robin"}},
            {"compare": {"policies": ["best_fit", "round_robin"]}},
            {"compare": {"warm_starts": [0.2, 1.5]}},
            {"compare": {"scenarios": [{"n_pms_initial": 0}]}},
            {"filter": {"k": 5, "split": [1, 1]}},
            {"agent": {"gamma": 0.0}},
            {"agent": {"encoding": "convolutional"}},
            {"trace": {"path": str(self.dir / "absent.jsonl")}},
            {"trace": {"catalog": [{"mem": 4}]}},
            {"agent": [1]},
        ]
        for data in bad_configs:
            with self.subTest(data=data), self.assertRaises(ConfigError):
                resolve_config(data)

    def test_unreadable_files(self):
        with self.assertRaises(ConfigError):
            load_config(self.dir / "absent.json")
        broken = self.dir / "broken.json"
        broken.write_text("{not json", encoding="utf-8")
        with self.assertRaises(ConfigError):
            load_config(broken)

    def test_manifest_reproduces_config(self):
        config = load_config(self.write({"scenario": {"n_pms_initial": 4}, "filter": {"enabled": False}}), {"seed": 9})
        manifest = write_manifest(self.dir, "eval", config)
        self.assertEqual(manifest["seed"], 9)
        self.assertTrue(manifest["version"])

        reloaded = load_config(self.dir / "manifest.json")
        self.assertEqual(reloaded.raw, config.raw)
        self.assertEqual(reloaded.scenario, config.scenario)
        self.assertEqual(reloaded.candidate_filter, config.candidate_filter)

    def test_resolving_is_idempotent(self):
        config = load_config(self.write({"agent": {"grad_clip": None, "workers": 2}}))
        self.assertIsNone(config.agent.grad_clip)
        self.assertEqual(resolve_config(json.loads(json.dumps(config.raw))).raw, config.raw)

    def test_arrival_rate_validation(self):
        self.assertEqual(load_config()["trace"]["arrival_rate"], 1.0)
        self.assertEqual(load_config(overrides={"arrival_rate": 2.5})["trace"]["arrival_rate"], 2.5)
        with self.assertRaises(ConfigError):
            resolve_config({"trace": {"arrival_rate": 0}})


class ExampleConfigTests(SimpleTestCase):
    def test_loads(self):
        config = load_config(EXAMPLE_CONFIG)
        self.assertEqual(config["trace"]["arrival_rate"], 4.0)
        self.assertEqual(config["compare"]["warm_starts"], WARM_START_GRID)

    def test_every_compare_scenario_reaches_every_warm_start(self):
        config = load_config(EXAMPLE_CONFIG)
        trace = run_trace(config)
        for data in config["compare"]["scenarios"]:
            scenario = scenario_from(data)
            for ratio in config["compare"]["warm_starts"]:
                with self.subTest(scenario=scenario.descriptor(with_warm_start=False), ratio=ratio):
                    state, rest = warm_start(scenario.initial_state(), trace, ratio)
                    self.assertGreaterEqual(state.cpu_utilization(), ratio)
                    self.assertTrue(rest.creates)
