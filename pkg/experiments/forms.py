"""
Run configuration: one form per config section, plus the loader that merges
a JSON config file (or a run manifest) with command-line overrides.
"""

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from django import forms

from cluster.core import NumaResources
from experiments.exceptions import ConfigError
from learning.agent import AgentConfig
from learning.features import Encoding
from schedulers.heuristics import DEFAULT_K, DEFAULT_SURROGATE_WEIGHTS, CandidateFilter
from simulation.env import RewardKind
from simulation.policies import HEURISTIC_POLICIES, POLICY_NAMES
from traces.utils import ScenarioConfig, ScenarioMode, VmType

WARM_START_GRID = [0.0, 0.3, 0.4, 0.5, 0.6]


class SectionForm(forms.Form):
    """Validates one config section; keys left out take the field's `initial`."""

    def __init__(self, data=None, **kwargs):
        data = dict(data or {})
        self.unknown_keys = sorted(set(data) - set(self.base_fields))
        for name, form_field in self.base_fields.items():
            if name not in data and form_field.initial is not None:
                data[name] = copy.deepcopy(form_field.initial)
        super().__init__(data, **kwargs)

    def clean(self):
        cleaned_data = super().clean()
        if self.unknown_keys:
            raise forms.ValidationError(f"Unknown keys: {', '.join(self.unknown_keys)}")
        return cleaned_data


class ScenarioForm(SectionForm):
    n_pms_initial = forms.IntegerField(min_value=1, initial=5)
    warm_start_ratio = forms.FloatField(min_value=0.0, initial=0.0)
    mode = forms.ChoiceField(
        choices=[(mode.value, mode.value) for mode in ScenarioMode],
        initial=ScenarioMode.NON_EXPANSION.value,
    )
    expansion_step = forms.IntegerField(min_value=1, initial=10)
    n_pms_max = forms.IntegerField(min_value=1, required=False)
    pm_capacity = forms.JSONField(initial={"cpu": 32, "mem": 64})
    seed = forms.IntegerField(initial=0)

    def clean_warm_start_ratio(self):
        ratio = self.cleaned_data.get("warm_start_ratio")
        if ratio is not None and ratio >= 1:
            raise forms.ValidationError("Warm-start ratio must be below 1.")
        return ratio

    def clean_pm_capacity(self):
        capacity = self.cleaned_data.get("pm_capacity")
        if not isinstance(capacity, dict) or set(capacity) != {"cpu", "mem"}:
            raise forms.ValidationError('Expected {"cpu": int, "mem": int} per NUMA node.')
        if any(not isinstance(v, int) or isinstance(v, bool) or v <= 0 for v in capacity.values()):
            raise forms.ValidationError("NUMA capacity must be positive integers.")
        return capacity

    def clean(self):
        cleaned_data = super().clean()
        initial = cleaned_data.get("n_pms_initial")
        n_max = cleaned_data.get("n_pms_max")
        if cleaned_data.get("mode") == ScenarioMode.EXPANSION.value:
            if n_max is None:
                self.add_error("n_pms_max", "Expansion scenarios need n_pms_max.")
            elif initial is not None and n_max < initial:
                self.add_error("n_pms_max", f"n_pms_max {n_max} is below n_pms_initial {initial}.")
        return cleaned_data


def scenario_from(cleaned: dict) -> ScenarioConfig:
    capacity = cleaned["pm_capacity"]
    return ScenarioConfig(
        n_pms_initial=cleaned["n_pms_initial"],
        warm_start_ratio=cleaned["warm_start_ratio"],
        mode=cleaned["mode"],
        expansion_step=cleaned["expansion_step"],
        n_pms_max=cleaned["n_pms_max"],
        pm_capacity=NumaResources(capacity["cpu"], capacity["mem"]),
        seed=cleaned["seed"],
    )


class TraceForm(SectionForm):
    path = forms.CharField(required=False, help_text="Trace file; synthetic traces are generated when empty.")
    length = forms.IntegerField(min_value=1, initial=1000)
    seed = forms.IntegerField(initial=0)
    arrival_rate = forms.FloatField(initial=1.0, help_text="Creates per time unit in synthetic traces.")
    catalog = forms.JSONField(required=False)

    def clean_path(self):
        path = self.cleaned_data.get("path")
        if path and not Path(path).is_file():
            raise forms.ValidationError(f"Trace file {path} does not exist.")
        return path or None

    def clean_arrival_rate(self):
        rate = self.cleaned_data.get("arrival_rate")
        if rate is not None and rate <= 0:
            raise forms.ValidationError("Arrival rate must be positive.")
        return rate

    def clean_catalog(self):
        catalog = self.cleaned_data.get("catalog")
        if catalog is None:
            return None
        if not isinstance(catalog, list) or not catalog:
            raise forms.ValidationError("Catalog must be a non-empty list of VM types.")
        try:
            return [VmType.from_dict(entry).to_dict() for entry in catalog]
        except (KeyError, TypeError, ValueError) as e:
            raise forms.ValidationError(f"Invalid VM type: {e}")


class SchedulerForm(SectionForm):
    policy = forms.ChoiceField(choices=[(name, name) for name in POLICY_NAMES], initial="best_fit")
    checkpoint = forms.CharField(required=False)

    def clean_checkpoint(self):
        return self.cleaned_data.get("checkpoint") or None


class FilterForm(SectionForm):
    k = forms.IntegerField(min_value=1, initial=DEFAULT_K)
    split = forms.JSONField(required=False, help_text="[n_bf, n_is]; named split for k when empty.")
    weights = forms.JSONField(initial=list(DEFAULT_SURROGATE_WEIGHTS))
    enabled = forms.BooleanField(required=False, initial=True)

    def clean_split(self):
        split = self.cleaned_data.get("split")
        if split is None:
            return None
        if (
            not isinstance(split, list)
            or len(split) != 2
            or any(not isinstance(n, int) or n < 0 for n in split)
        ):
            raise forms.ValidationError("Split must be [n_bf, n_is] with non-negative integers.")
        return split

    def clean_weights(self):
        weights = self.cleaned_data.get("weights")
        if not isinstance(weights, list) or len(weights) != 3:
            raise forms.ValidationError("Weights must list three numbers.")
        try:
            return [float(w) for w in weights]
        except (TypeError, ValueError):
            raise forms.ValidationError("Weights must list three numbers.")

    def clean(self):
        cleaned_data = super().clean()
        split, k = cleaned_data.get("split"), cleaned_data.get("k")
        if split is not None and k is not None and sum(split) != k:
            self.add_error("split", f"Split {split} does not add up to k={k}.")
        return cleaned_data


class AgentForm(SectionForm):
    gamma = forms.FloatField(min_value=0.0, max_value=1.0, initial=0.75)
    epsilon = forms.FloatField(min_value=0.0, max_value=1.0, initial=0.1)
    batch_size = forms.IntegerField(min_value=1, initial=2048)
    lr = forms.FloatField(min_value=0.0, initial=5e-4)
    tau = forms.FloatField(min_value=0.0, max_value=1.0, initial=0.01)
    epochs = forms.IntegerField(min_value=1, initial=3000)
    episodes_per_epoch = forms.IntegerField(min_value=1, initial=5)
    buffer_capacity = forms.IntegerField(min_value=1, initial=100_000)
    hidden = forms.IntegerField(min_value=1, initial=128)
    grad_clip = forms.FloatField(min_value=0.0, required=False, initial=10.0)
    update_every = forms.IntegerField(min_value=1, initial=1)
    reward = forms.ChoiceField(choices=[(r.value, r.value) for r in RewardKind], initial=RewardKind.UNIT.value)
    encoding = forms.ChoiceField(choices=[(e.value, e.value) for e in Encoding], initial=Encoding.LOOK_AHEAD.value)
    workers = forms.IntegerField(min_value=1, required=False)
    checkpoint_every = forms.IntegerField(min_value=0, initial=100)
    seed = forms.IntegerField(initial=0)

    def clean(self):
        cleaned_data = super().clean()
        if not self.errors:
            try:
                AgentConfig.from_dict(cleaned_data)
            except ValueError as e:
                raise forms.ValidationError(str(e))
        return cleaned_data


class CompareForm(SectionForm):
    policies = forms.JSONField(initial=list(HEURISTIC_POLICIES))
    checkpoints = forms.JSONField(initial={}, required=False)
    warm_starts = forms.JSONField(initial=WARM_START_GRID)
    scenarios = forms.JSONField(required=False, help_text="Scenario sections; the main scenario when empty.")
    seeds = forms.IntegerField(min_value=1, initial=5)

    def clean_policies(self):
        policies = self.cleaned_data.get("policies")
        if not isinstance(policies, list) or not policies:
            raise forms.ValidationError("List at least one policy.")
        unknown = [name for name in policies if name not in POLICY_NAMES]
        if unknown:
            raise forms.ValidationError(
                f"Unknown policies {', '.join(map(str, unknown))}; choose from {', '.join(POLICY_NAMES)}."
            )
        return policies

    def clean_checkpoints(self):
        checkpoints = self.cleaned_data.get("checkpoints") or {}
        if not isinstance(checkpoints, dict):
            raise forms.ValidationError("Checkpoints map policy names to checkpoint files.")
        return checkpoints

    def clean_warm_starts(self):
        ratios = self.cleaned_data.get("warm_starts")
        if not isinstance(ratios, list) or not ratios:
            raise forms.ValidationError("List at least one warm-start ratio.")
        if any(not isinstance(r, (int, float)) or not 0 <= r < 1 for r in ratios):
            raise forms.ValidationError("Warm-start ratios must lie in [0, 1).")
        return [float(r) for r in ratios]

    def clean_scenarios(self):
        scenarios = self.cleaned_data.get("scenarios")
        if scenarios is None:
            return None
        if not isinstance(scenarios, list):
            raise forms.ValidationError("Scenarios must be a list of scenario sections.")
        cleaned = []
        for i, data in enumerate(scenarios):
            if not isinstance(data, dict):
                raise forms.ValidationError(f"Scenario {i} must be a JSON object.")
            form = ScenarioForm(data)
            if not form.is_valid():
                raise forms.ValidationError(f"Scenario {i}: {form.errors.as_text()}")
            cleaned.append(form.cleaned_data)
        return cleaned


class EvalForm(SectionForm):
    seeds = forms.IntegerField(min_value=1, initial=10)


class AblateForm(SectionForm):
    variants = forms.JSONField(initial=["operators"], help_text="Variant or variant-set names.")
    seeds = forms.IntegerField(min_value=1, initial=1)

    def clean_variants(self):
        variants = self.cleaned_data.get("variants")
        if isinstance(variants, str):
            variants = [variants]
        if not isinstance(variants, list) or not variants:
            raise forms.ValidationError("List at least one ablation variant.")
        return [str(name) for name in variants]


SECTION_FORMS = {
    "scenario": ScenarioForm,
    "trace": TraceForm,
    "scheduler": SchedulerForm,
    "filter": FilterForm,
    "agent": AgentForm,
    "compare": CompareForm,
    "eval": EvalForm,
    "ablate": AblateForm,
}

# flag -> config keys it sets
OVERRIDE_TARGETS = {
    "seed": [("scenario", "seed"), ("trace", "seed"), ("agent", "seed")],
    "epochs": [("agent", "epochs")],
    "pms": [("scenario", "n_pms_initial")],
    "warm_start": [("scenario", "warm_start_ratio")],
    "mode": [("scenario", "mode")],
    "policy": [("scheduler", "policy")],
    "checkpoint": [("scheduler", "checkpoint")],
    "trace": [("trace", "path")],
    "length": [("trace", "length")],
    "arrival_rate": [("trace", "arrival_rate")],
    "variants": [("ablate", "variants")],
}


@dataclass
class RunConfig:
    """Validated configuration; `raw` is its JSON form, as stored in manifests."""

    raw: dict
    scenario: ScenarioConfig
    agent: AgentConfig
    candidate_filter: CandidateFilter
    sections: dict = field(default_factory=dict)

    def __getitem__(self, section):
        return self.sections[section]


def read_config_file(path) -> dict:
    """Load a config file; a run manifest yields the config it recorded."""
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Config file {path} does not exist") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    if "config" in data and "version" in data:
        return data["config"]
    return data


def apply_overrides(raw: dict, overrides: dict | None) -> dict:
    merged = copy.deepcopy(raw)
    for flag, value in (overrides or {}).items():
        if value is None:
            continue
        if flag not in OVERRIDE_TARGETS:
            raise ConfigError(f"Unknown override {flag}")
        for section, key in OVERRIDE_TARGETS[flag]:
            merged.setdefault(section, {})[key] = value
    return merged


def resolve_config(raw: dict) -> RunConfig:
    """
    Validate every section of `raw`, filling defaults.

    Raises:
        ConfigError: unknown sections, or any section failing validation
    """
    unknown = sorted(set(raw) - set(SECTION_FORMS))
    if unknown:
        raise ConfigError(f"Unknown config sections: {', '.join(unknown)}")

    sections, errors = {}, {}
    for name, form_class in SECTION_FORMS.items():
        data = raw.get(name) or {}
        if not isinstance(data, dict):
            errors[name] = ["Section must be a JSON object."]
            continue
        form = form_class(data)
        if form.is_valid():
            sections[name] = form.cleaned_data
        else:
            for key, messages in form.errors.items():
                errors[f"{name}.{key}"] = messages
    if errors:
        raise ConfigError("Invalid configuration", errors)

    filter_data = sections["filter"]
    agent_data = dict(sections["agent"], k=filter_data["k"])
    return RunConfig(
        raw=sections,
        scenario=scenario_from(sections["scenario"]),
        agent=AgentConfig.from_dict(agent_data),
        candidate_filter=CandidateFilter.from_dict(filter_data),
        sections=sections,
    )


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    raw = read_config_file(path) if path else {}
    return resolve_config(apply_overrides(raw, overrides))
