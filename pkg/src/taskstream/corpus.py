"""Instruction-annotated task corpora: loading, validation, splitting, synthesis.

A corpus is a directory with one JSON document per task (see docs/task_format.md
for the canonical keys and the alias table). Parsed corpora are immutable and
safe to share across threads.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

CATEGORIES = ("QG", "AG", "CF", "IAG", "MM", "VF")

CATEGORY_MAP_FILENAME = "categories.json"


@dataclass(frozen=True)
class InstructionExample:
    """One worked example inside an instruction, positive or negative."""

    input: str
    output: str
    explanation: str | None = None
    polarity: str = "positive"


@dataclass(frozen=True)
class Instruction:
    """Structured natural-language description of a task."""

    title: str
    definition: str
    prompt: str | None = None
    things_to_avoid: str | None = None
    caution: str | None = None
    examples: tuple[InstructionExample, ...] = ()

    def positive_examples(self) -> tuple[InstructionExample, ...]:
        return tuple(e for e in self.examples if e.polarity == "positive")

    def negative_examples(self) -> tuple[InstructionExample, ...]:
        return tuple(e for e in self.examples if e.polarity == "negative")


@dataclass(frozen=True)
class Instance:
    """A labeled evaluation instance with one or more reference outputs."""

    input: str
    gold_outputs: tuple[str, ...]


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    category: str
    instruction: Instruction
    instances: tuple[Instance, ...]


@dataclass(frozen=True)
class Corpus:
    tasks: tuple[TaskSpec, ...]
    source_note: str = ""

    def __post_init__(self) -> None:
        ids = [t.task_id for t in self.tasks]
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate task ids in corpus: {dupes}")

    def __len__(self) -> int:
        return len(self.tasks)

    def task_ids(self) -> tuple[str, ...]:
        return tuple(t.task_id for t in self.tasks)

    def task_by_id(self, task_id: str) -> TaskSpec:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise KeyError(task_id)


@dataclass(frozen=True)
class SplitResult:
    """A seeded split into training tasks and the unseen-task stream."""

    train_tasks: tuple[TaskSpec, ...]
    unseen_tasks: tuple[TaskSpec, ...]
    seed: int


@dataclass(frozen=True)
class Diagnostic:
    source: str
    message: str

    def __str__(self) -> str:
        return f"{self.source}: {self.message}"


@dataclass(frozen=True)
class LoadResult:
    corpus: Corpus
    diagnostics: tuple[Diagnostic, ...]


# --------------------------------------------------------------------------
# Task-file parsing

# Canonical key -> accepted spellings, all matched case-insensitively after
# collapsing whitespace, "&", "_" and "-" runs to single spaces.
_FIELD_ALIASES: dict[str, tuple[str, ...]] = {
    "title": ("title",),
    "definition": ("definition",),
    "prompt": ("prompt",),
    "things_to_avoid": ("things to avoid", "avoid"),
    "caution": ("emphasis caution", "emphasis and caution", "caution"),
    "examples": ("examples",),
    "instances": ("instances",),
    "category": ("category",),
    "positive": ("positive examples",),
    "negative": ("negative examples",),
    "input": ("input",),
    "output": ("output",),
    "explanation": ("explanation", "reason"),
}


def _canon(key: str) -> str:
    return re.sub(r"[\s&_-]+", " ", key.strip().lower())


_ALIAS_LOOKUP = {
    _canon(alias): canonical
    for canonical, aliases in _FIELD_ALIASES.items()
    for alias in aliases
}


def _fields(doc: Mapping[str, object]) -> dict[str, object]:
    """Map a raw document's keys through the alias table; unknown keys are ignored."""
    out: dict[str, object] = {}
    for key, value in doc.items():
        canonical = _ALIAS_LOOKUP.get(_canon(str(key)))
        if canonical is not None and canonical not in out:
            out[canonical] = value
    return out


def _as_text(value: object) -> str | None:
    if isinstance(value, str):
        stripped = value.strip()
        return stripped if stripped else None
    return None


def _parse_example(raw: object, polarity: str, problems: list[str]) -> InstructionExample | None:
    if not isinstance(raw, Mapping):
        problems.append(f"{polarity} example entry is not an object")
        return None
    f = _fields(raw)
    inp = _as_text(f.get("input"))
    out = _as_text(f.get("output"))
    if inp is None or out is None:
        problems.append(f"{polarity} example missing input or output")
        return None
    return InstructionExample(
        input=inp,
        output=out,
        explanation=_as_text(f.get("explanation")),
        polarity=polarity,
    )


def _parse_instance(raw: object, problems: list[str]) -> Instance | None:
    if not isinstance(raw, Mapping):
        problems.append("instance entry is not an object")
        return None
    f = _fields(raw)
    inp = _as_text(f.get("input"))
    if inp is None:
        problems.append("instance missing input")
        return None
    outputs = f.get("output")
    if isinstance(outputs, str):
        outputs = [outputs]
    if not isinstance(outputs, Sequence) or not outputs:
        problems.append("instance missing output list")
        return None
    golds: list[str] = []
    seen: set[str] = set()
    for entry in outputs:
        text = _as_text(entry)
        if text is None:
            problems.append("instance output entry is empty or not text")
            return None
        # Repeated golds are common in benchmark dumps; keep the first.
        if text not in seen:
            seen.add(text)
            golds.append(text)
    return Instance(input=inp, gold_outputs=tuple(golds))


def parse_task_document(
    doc: Mapping[str, object],
    task_id: str,
    category_map: Mapping[str, str] | None = None,
) -> tuple[TaskSpec | None, list[str]]:
    """Build a TaskSpec from one raw task document.

    Returns (task, problems); task is None when a required field is missing
    or unusable. Field names go through the alias table.
    """
    problems: list[str] = []
    f = _fields(doc)

    title = _as_text(f.get("title"))
    definition = _as_text(f.get("definition"))
    if title is None:
        problems.append("missing required field: Title")
    if definition is None:
        problems.append("missing required field: Definition")

    examples: list[InstructionExample] = []
    raw_examples = f.get("examples")
    if raw_examples is not None:
        if not isinstance(raw_examples, Mapping):
            problems.append("Examples must be an object with positive/negative lists")
        else:
            ex_fields = _fields(raw_examples)
            for polarity, key in (("positive", "positive"), ("negative", "negative")):
                entries = ex_fields.get(key, [])
                if not isinstance(entries, Sequence):
                    problems.append(f"{polarity} examples must be a list")
                    continue
                for raw in entries:
                    parsed = _parse_example(raw, polarity, problems)
                    if parsed is not None:
                        examples.append(parsed)

    instances: list[Instance] = []
    raw_instances = f.get("instances")
    if not isinstance(raw_instances, Sequence) or not raw_instances:
        problems.append("missing required field: Instances")
    else:
        for raw in raw_instances:
            parsed = _parse_instance(raw, problems)
            if parsed is not None:
                instances.append(parsed)

    category = _as_text(f.get("category"))
    if category is None and category_map is not None:
        category = category_map.get(task_id)
    if category is None:
        problems.append("no Category field and no category-map entry")
    elif category not in CATEGORIES:
        problems.append(f"unknown category: {category}")

    if problems:
        return None, problems
    assert title is not None and definition is not None and category is not None
    task = TaskSpec(
        task_id=task_id,
        category=category,
        instruction=Instruction(
            title=title,
            definition=definition,
            prompt=_as_text(f.get("prompt")),
            things_to_avoid=_as_text(f.get("things_to_avoid")),
            caution=_as_text(f.get("caution")),
            examples=tuple(examples),
        ),
        instances=tuple(instances),
    )
    return task, []


def load_corpus(
    root_path: str | Path,
    category_map: Mapping[str, str] | None = None,
) -> LoadResult:
    """Load every parseable task file under root_path.

    Malformed files become diagnostics and are skipped; an unreadable root is
    fatal. Every task in the returned corpus passes validate_task cleanly.
    A `categories.json` file in the root (task_id -> category) supplements
    files that lack a Category key; an explicit category_map wins over it.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {root}")

    merged_map: dict[str, str] = {}
    map_path = root / CATEGORY_MAP_FILENAME
    diagnostics: list[Diagnostic] = []
    if map_path.is_file():
        try:
            loaded = json.loads(map_path.read_text(encoding="utf-8"))
            if isinstance(loaded, Mapping):
                merged_map.update({str(k): str(v) for k, v in loaded.items()})
            else:
                diagnostics.append(Diagnostic(str(map_path), "category map is not an object"))
        except (OSError, json.JSONDecodeError) as exc:
            diagnostics.append(Diagnostic(str(map_path), f"unreadable category map: {exc}"))
    if category_map is not None:
        merged_map.update(category_map)

    tasks: list[TaskSpec] = []
    for path in sorted(root.glob("*.json")):
        if path.name == CATEGORY_MAP_FILENAME:
            continue
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            diagnostics.append(Diagnostic(str(path), f"unparseable task file: {exc}"))
            continue
        if not isinstance(doc, Mapping):
            diagnostics.append(Diagnostic(str(path), "task file is not a JSON object"))
            continue
        task, problems = parse_task_document(doc, task_id=path.stem, category_map=merged_map)
        if task is None:
            for problem in problems:
                diagnostics.append(Diagnostic(str(path), problem))
            continue
        leftover = validate_task(task)
        if leftover:
            diagnostics.extend(Diagnostic(str(path), d.message) for d in leftover)
            continue
        tasks.append(task)

    corpus = Corpus(tasks=tuple(tasks), source_note=f"loaded from {root}")
    return LoadResult(corpus=corpus, diagnostics=tuple(diagnostics))


# --------------------------------------------------------------------------
# Validation

def validate_task(task: TaskSpec) -> list[Diagnostic]:
    """Check every per-task invariant; one diagnostic per violation."""
    out: list[Diagnostic] = []
    tid = task.task_id

    def flag(message: str) -> None:
        out.append(Diagnostic(tid, message))

    if not tid or tid != tid.strip() or any(c.isspace() for c in tid):
        flag("task_id must be a non-empty identifier without whitespace")
    if task.category not in CATEGORIES:
        flag(f"category must be one of {CATEGORIES}")
    if not task.instruction.title.strip():
        flag("instruction title is empty")
    if not task.instruction.definition.strip():
        flag("instruction definition is empty")
    for idx, ex in enumerate(task.instruction.examples):
        if not ex.input.strip():
            flag(f"example {idx}: input is empty")
        if not ex.output.strip():
            flag(f"example {idx}: output is empty")
        if ex.polarity not in ("positive", "negative"):
            flag(f"example {idx}: polarity must be positive or negative")
    if not task.instances:
        flag("task has no labeled instances")
    for idx, inst in enumerate(task.instances):
        if not inst.input.strip():
            flag(f"instance {idx}: input is empty")
        if not inst.gold_outputs:
            flag(f"instance {idx}: gold_outputs is empty")
            continue
        trimmed = [g.strip() for g in inst.gold_outputs]
        if any(not g for g in trimmed):
            flag(f"instance {idx}: gold output is empty")
        if len(set(trimmed)) != len(trimmed):
            flag(f"instance {idx}: duplicate gold outputs")
    return out


# --------------------------------------------------------------------------
# Splitting and sampling

def split_corpus(corpus: Corpus, k: int, seed: int) -> SplitResult:
    """Draw a uniform k-subset as training tasks; the rest, in corpus order, is unseen.

    Deterministic per (corpus, k, seed).
    """
    n = len(corpus.tasks)
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < {n}, got {k}")
    rng = random.Random(seed)
    chosen = set(rng.sample(range(n), k))
    train = tuple(t for i, t in enumerate(corpus.tasks) if i in chosen)
    unseen = tuple(t for i, t in enumerate(corpus.tasks) if i not in chosen)
    return SplitResult(train_tasks=train, unseen_tasks=unseen, seed=seed)


def sample_eval_instances(task: TaskSpec, n: int = 1000, seed: int = 0) -> list[Instance]:
    """Sample min(n, all) evaluation instances without replacement, deterministically."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not task.instances:
        raise ValueError(f"task {task.task_id} has no instances to sample")
    size = min(n, len(task.instances))
    rng = random.Random(seed)
    return rng.sample(list(task.instances), size)


# --------------------------------------------------------------------------
# Synthetic corpora

@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of a generated desk-scale corpus.

    `overlap` is the fraction p of each task's evaluation instances whose
    (input, gold) pair also appears as an instruction positive example, so
    memorizer-style learners have a closed-form fresh-task score of 100*p.
    Every task draws all of its text from a private vocabulary, making
    cross-task ROUGE-L exactly zero.
    """

    tasks_per_category: int = 2
    instances_per_task: int = 10
    overlap: float = 0.4
    negatives_per_task: int = 1
    categories: tuple[str, ...] = CATEGORIES


def gen_synthetic_corpus(spec: SyntheticSpec, seed: int) -> Corpus:
    if not 0.0 <= spec.overlap <= 1.0:
        raise ValueError(f"overlap must be in [0, 1], got {spec.overlap}")
    if spec.tasks_per_category < 1 or spec.instances_per_task < 1:
        raise ValueError("tasks_per_category and instances_per_task must be >= 1")
    unknown = [c for c in spec.categories if c not in CATEGORIES]
    if unknown:
        raise ValueError(f"unknown categories: {unknown}")

    rng = random.Random(seed)
    tasks: list[TaskSpec] = []
    task_index = 0
    for category in spec.categories:
        for _ in range(spec.tasks_per_category):
            tasks.append(_gen_task(spec, category, task_index, rng))
            task_index += 1
    note = (
        f"synthetic seed={seed} tasks_per_category={spec.tasks_per_category} "
        f"instances={spec.instances_per_task} overlap={spec.overlap}"
    )
    return Corpus(tasks=tuple(tasks), source_note=note)


def _gen_task(spec: SyntheticSpec, category: str, task_index: int, rng: random.Random) -> TaskSpec:
    counter = iter(range(10 ** 9))

    def fresh(n_tokens: int) -> str:
        # Private, punctuation-free vocabulary; disjoint across tasks by the
        # task_index prefix, stable under metrics normalization.
        return " ".join(f"v{task_index:03d}x{next(counter)}" for _ in range(n_tokens))

    n = spec.instances_per_task
    covered = round(spec.overlap * n)
    instances = [
        Instance(input=fresh(3), gold_outputs=(fresh(2),)) for _ in range(n)
    ]
    rng.shuffle(instances)

    examples = [
        InstructionExample(
            input=inst.input,
            output=inst.gold_outputs[0],
            explanation=fresh(2),
            polarity="positive",
        )
        for inst in instances[:covered]
    ]
    examples.extend(
        InstructionExample(
            input=fresh(3),
            output=fresh(2),
            explanation=fresh(2),
            polarity="negative",
        )
        for _ in range(spec.negatives_per_task)
    )

    # Index-first ids keep directory-sorted reloads in generation order.
    task_id = f"t{task_index:03d}{category.lower()}"
    instruction = Instruction(
        title=fresh(2),
        definition=fresh(4),
        prompt=fresh(2),
        things_to_avoid=fresh(3),
        caution=fresh(2),
        examples=tuple(examples),
    )
    return TaskSpec(
        task_id=task_id,
        category=category,
        instruction=instruction,
        instances=tuple(instances),
    )


# --------------------------------------------------------------------------
# Writing (canonical task-file form; enables round-trip tests)

def task_to_document(task: TaskSpec) -> dict[str, object]:
    instr = task.instruction
    doc: dict[str, object] = {"Title": instr.title, "Definition": instr.definition}
    if instr.prompt is not None:
        doc["Prompt"] = instr.prompt
    if instr.things_to_avoid is not None:
        doc["Things to Avoid"] = instr.things_to_avoid
    if instr.caution is not None:
        doc["Emphasis & Caution"] = instr.caution
    if instr.examples:
        doc["Examples"] = {
            "Positive Examples": [_example_to_doc(e) for e in instr.positive_examples()],
            "Negative Examples": [_example_to_doc(e) for e in instr.negative_examples()],
        }
    doc["Instances"] = [
        {"input": inst.input, "output": list(inst.gold_outputs)} for inst in task.instances
    ]
    doc["Category"] = task.category
    return doc


def _example_to_doc(ex: InstructionExample) -> dict[str, str]:
    doc = {"input": ex.input, "output": ex.output}
    if ex.explanation is not None:
        doc["explanation"] = ex.explanation
    return doc


def write_corpus(corpus: Corpus, root_path: str | Path) -> list[Path]:
    """Write one canonical task file per task; returns the written paths."""
    root = Path(root_path)
    root.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for task in corpus.tasks:
        path = root / f"{task.task_id}.json"
        path.write_text(
            json.dumps(task_to_document(task), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        written.append(path)
    return written
