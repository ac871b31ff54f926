"""The two classification roles of the pipeline behind one handle type:
`region3` sorts proposals into text / no-text / both, `glyph2` tells jar
glyphs from the rest. Also dataset manifests, splitting, augmentation and
training of either role."""
from __future__ import annotations

import base64
import csv
import io
import json
import logging
import os
import shlex
import subprocess
import threading

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from PIL import Image

from glyphline.errors import InvalidInput, ModelError, PluginError
from glyphline.geometry import RegionLabel
from glyphline.imaging import RasterImage, read_image, resize, to_grayscale, to_pil
from glyphline.neuralnet import Network, SolverConfig, TrainingResult, symbolnet, train
from glyphline.utils import atomic_write

logger = logging.getLogger(__name__)

__all__ = [
    'RegionLabel', 'GlyphLabel', 'Preprocess', 'ClassifierHandle', 'PluginClassifier',
    'classify_region', 'classify_glyph', 'AugmentationPlan', 'augment', 'ManifestEntry',
    'DatasetManifest', 'stratified_split', 'EvaluationResult', 'evaluate', 'score',
    'load_handle', 'load_samples', 'train_classifier',
]

MIN_REGION_SIDE = 4


class GlyphLabel(Enum):
    JAR = 'jar'
    NO_JAR = 'no-jar'


ROLE_LABELS = {
    'region3': (RegionLabel.TEXT, RegionLabel.NO_TEXT, RegionLabel.BOTH),
    'glyph2': (GlyphLabel.NO_JAR, GlyphLabel.JAR),
}
Label = Union[RegionLabel, GlyphLabel]


def role_labels(role: str) -> Tuple[Label, ...]:
    if role not in ROLE_LABELS:
        raise ModelError(f"unknown classifier role {role}, expected one of {sorted(ROLE_LABELS)}")
    return ROLE_LABELS[role]


def parse_label(role: str, value: str) -> Label:
    for label in role_labels(role):
        if label.value == value:
            return label
    raise InvalidInput(f"label '{value}' is not a {role} label {[lbl.value for lbl in role_labels(role)]}")


@dataclass(frozen=True)
class Preprocess:
    """Square resize, optional grayscale, intensity divisor"""
    size: int = 32
    grayscale: bool = True
    divisor: float = 255.0

    @classmethod
    def for_role(cls, role: str) -> Preprocess:
        role_labels(role)
        return cls(size=64) if role == 'region3' else cls(size=32)

    @classmethod
    def from_dict(cls, d: Dict) -> Preprocess:
        return cls(**d)

    def to_dict(self) -> Dict:
        return {'size': self.size, 'grayscale': self.grayscale, 'divisor': self.divisor}

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return (1 if self.grayscale else 3, self.size, self.size)

    def prepare(self, img: RasterImage) -> RasterImage:
        """Resized and color-converted image; prepared images pass unchanged"""
        if self.grayscale:
            img = to_grayscale(img)
        elif img.channels == 1:
            img = RasterImage(np.repeat(img.data[:, :, None], 3, axis=2))
        return resize(img, self.size, self.size)

    def to_tensor(self, img: RasterImage) -> np.ndarray:
        data = self.prepare(img).data.astype(np.float32) / np.float32(self.divisor)
        if data.ndim == 2:
            return data[None]
        return data.transpose(2, 0, 1)


def png_base64(img: RasterImage) -> str:
    buf = io.BytesIO()
    to_pil(img).save(buf, format='PNG')
    return base64.b64encode(buf.getvalue()).decode('ascii')


class PluginClassifier:
    """External classifier over line-delimited JSON on stdin/stdout

    Each request `{"id", "png_base64"}` is answered by one line
    `{"id", "label", "confidence"}`. The process starts on first use.
    """

    def __init__(self, role: str, command: Union[str, Sequence[str]]):
        self.role = role
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self._proc = None
        self._next_id = 0
        self._lock = threading.Lock()

    def _process(self):
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1,
                )
            except OSError as err:
                raise PluginError(f"cannot start plugin {self.command}: {err}") from err
        return self._proc

    def classify(self, img: RasterImage) -> Tuple[Label, float]:
        request = png_base64(img)
        # one request in flight at a time keeps answers paired with requests
        with self._lock:
            proc = self._process()
            request_id = self._next_id
            self._next_id += 1
            try:
                proc.stdin.write(json.dumps({'id': request_id, 'png_base64': request}) + '\n')
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as err:
                raise PluginError(f"plugin {self.command} died: {err}") from err
        if not line:
            raise PluginError(f"plugin {self.command} closed its output")
        try:
            response = json.loads(line)
            label = parse_label(self.role, response['label'])
            confidence = float(response['confidence'])
        except (ValueError, KeyError, TypeError, InvalidInput) as err:
            raise PluginError(f"bad plugin response {line.strip()!r}: {err}") from err
        if response.get('id') != request_id:
            raise PluginError(f"plugin answered id {response.get('id')} to request {request_id}")
        if not 0.0 <= confidence <= 1.0:
            raise PluginError(f"plugin confidence {confidence} outside [0, 1]")
        return label, confidence

    def close(self):
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
            self._proc = None


@dataclass(frozen=True, eq=False)
class ClassifierHandle:
    role: str
    preprocess: Preprocess
    net: Optional[Network] = None
    plugin: Optional[PluginClassifier] = None
    source: str = ''

    def __post_init__(self):
        role_labels(self.role)
        if (self.net is None) == (self.plugin is None):
            raise ModelError("a classifier handle needs exactly one of a network or a plugin")
        if self.net is not None:
            if self.net.input_shape != self.preprocess.input_shape:
                raise ModelError(
                    f"network input {self.net.input_shape} does not match preprocessing {self.preprocess.input_shape}"
                )
            if self.net.classes != len(self.labels):
                raise ModelError(f"{self.role} needs {len(self.labels)} outputs, network has {self.net.classes}")

    @classmethod
    def from_plugin(cls, role: str, command: Union[str, Sequence[str]], preprocess: Preprocess = None):
        return cls(
            role=role,
            preprocess=preprocess or Preprocess.for_role(role),
            plugin=PluginClassifier(role, command),
            source=command if isinstance(command, str) else ' '.join(command),
        )

    @property
    def labels(self) -> Tuple[Label, ...]:
        return role_labels(self.role)

    def probabilities(self, crops: Sequence[RasterImage]) -> np.ndarray:
        if self.net is None:
            raise ModelError("plugin classifiers report labels only")
        batch = np.stack([self.preprocess.to_tensor(c) for c in crops])
        return self.net.predict(batch)

    def predict(self, crops: Sequence[RasterImage]) -> List[Tuple[Label, float]]:
        if not crops:
            return []
        if self.plugin is not None:
            return [self.plugin.classify(self.preprocess.prepare(c)) for c in crops]
        probs = self.probabilities(crops)
        winners = probs.argmax(axis=1)
        return [(self.labels[w], float(p[w])) for w, p in zip(winners, probs)]

    def save(self, path: str) -> str:
        if self.net is None:
            raise ModelError("only network-backed handles can be saved")
        metadata = {
            'role': self.role,
            'preprocess': self.preprocess.to_dict(),
            'labels': [lbl.value for lbl in self.labels],
        }
        return self.net.save(path, metadata=metadata)


def load_handle(path: str, role: str = None) -> ClassifierHandle:
    """Network-backed handle from a checkpoint; `role` enforces the role"""
    net, metadata = Network.load(path)
    if 'role' not in metadata:
        raise ModelError(f"checkpoint {path} does not record a classifier role")
    if role is not None and metadata['role'] != role:
        raise ModelError(f"checkpoint {path} is a {metadata['role']} model, expected {role}")
    preprocess = Preprocess.from_dict(metadata.get('preprocess', Preprocess.for_role(metadata['role']).to_dict()))
    return ClassifierHandle(metadata['role'], preprocess, net=net, source=path)


def _require_role(h: ClassifierHandle, role: str):
    if h.role != role:
        raise ModelError(f"expected a {role} classifier, got {h.role}")


def classify_region(
    h: ClassifierHandle, crop: RasterImage, warnings: List[str] = None, min_side: int = MIN_REGION_SIDE,
) -> Tuple[RegionLabel, float]:
    _require_role(h, 'region3')
    if crop.width < min_side or crop.height < min_side:
        msg = f"crop {crop.width}x{crop.height} too small to classify, labeled no-text"
        logger.warning(msg)
        if warnings is not None:
            warnings.append(msg)
        return RegionLabel.NO_TEXT, 0.0
    return h.predict([crop])[0]


def classify_glyph(h: ClassifierHandle, crop: RasterImage) -> Tuple[GlyphLabel, float]:
    _require_role(h, 'glyph2')
    return h.predict([crop])[0]


# augmentation

AUGMENTATIONS = ('hflip', 'vflip', 'rotate', 'shear', 'scale', 'translate')
IDENTITY = {'rotate': 0.0, 'shear': 0.0, 'scale': 1.0, 'translate': (0.0, 0.0)}


@dataclass(frozen=True)
class AugmentationPlan:
    """Ordered augmentation ops; each op is a name, drawing its parameter
    from the seeded generator, or a (name, parameter) pair"""
    ops: Tuple = ()
    seed: int = 0

    def __post_init__(self):
        ops = tuple(op if isinstance(op, str) else tuple(op) for op in self.ops)
        for op in ops:
            name = op if isinstance(op, str) else op[0]
            if name not in AUGMENTATIONS:
                raise InvalidInput(f"unknown augmentation {name}, expected one of {AUGMENTATIONS}")
        object.__setattr__(self, 'ops', ops)

    @classmethod
    def default(cls, count: int = 6, seed: int = 0) -> AugmentationPlan:
        return cls(tuple(AUGMENTATIONS[i % len(AUGMENTATIONS)] for i in range(count)), seed)

    def for_sample(self, index: int) -> AugmentationPlan:
        state = np.random.SeedSequence([self.seed, index]).generate_state(1)[0]
        return AugmentationPlan(self.ops, int(state))


def _draw(name: str, rng: np.random.Generator):
    if name == 'rotate':
        return float(rng.uniform(-15.0, 15.0))
    if name == 'shear':
        return float(rng.uniform(-0.2, 0.2))
    if name == 'scale':
        return float(rng.uniform(0.8, 1.2))
    if name == 'translate':
        return (float(rng.uniform(-0.1, 0.1)), float(rng.uniform(-0.1, 0.1)))
    return None


def _border_fill(img: RasterImage):
    d = img.data
    border = np.concatenate([d[0], d[-1], d[:, 0], d[:, -1]])
    fill = np.floor(np.median(border, axis=0) + 0.5).astype(int)
    return int(fill) if img.channels == 1 else tuple(int(v) for v in fill)


def _affine(img: RasterImage, matrix: np.ndarray, shift: Tuple[float, float]) -> RasterImage:
    """Apply p' = M (p - c) + c + shift about the image center"""
    center = np.array([img.width / 2.0, img.height / 2.0])
    inverse = np.linalg.inv(matrix)
    offset = center - inverse @ (center + np.asarray(shift))
    data = (inverse[0, 0], inverse[0, 1], offset[0], inverse[1, 0], inverse[1, 1], offset[1])
    out = to_pil(img).transform(
        (img.width, img.height), Image.Transform.AFFINE, data,
        resample=Image.Resampling.BILINEAR, fillcolor=_border_fill(img),
    )
    return RasterImage(np.asarray(out))


def apply_augmentation(img: RasterImage, name: str, value=None) -> RasterImage:
    if name == 'hflip':
        return RasterImage(img.data[:, ::-1])
    if name == 'vflip':
        return RasterImage(img.data[::-1])
    if value == IDENTITY[name] or (name == 'translate' and tuple(value) == IDENTITY[name]):
        return RasterImage(img.data)
    if name == 'rotate':
        theta = np.deg2rad(value)
        matrix = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        return _affine(img, matrix, (0.0, 0.0))
    if name == 'shear':
        return _affine(img, np.array([[1.0, value], [0.0, 1.0]]), (0.0, 0.0))
    if name == 'scale':
        return _affine(img, np.array([[value, 0.0], [0.0, value]]), (0.0, 0.0))
    tx, ty = value
    return _affine(img, np.eye(2), (tx * img.width, ty * img.height))


def augment(img: RasterImage, plan: AugmentationPlan) -> List[RasterImage]:
    """One output per op of the plan, each the size of the input"""
    rng = np.random.default_rng(plan.seed)
    out = []
    for op in plan.ops:
        if isinstance(op, str):
            name, value = op, _draw(op, rng)
        else:
            name, value = op
        out.append(apply_augmentation(img, name, value))
    return out


# datasets

class ManifestEntry(NamedTuple):
    path: str
    label: str


@dataclass
class DatasetManifest:
    entries: List[ManifestEntry]
    ratio: float = 0.70
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.ratio < 1:
            raise InvalidInput(f"split ratio must be in (0, 1), got {self.ratio}")
        self.entries = [ManifestEntry(*e) for e in self.entries]

    @classmethod
    def from_csv(cls, path: str, ratio: float = 0.70, seed: int = 0) -> DatasetManifest:
        """Rows of `path,label`; a header row is optional and relative paths
        resolve against the CSV's directory"""
        base = os.path.dirname(os.path.abspath(path))
        entries = []
        with open(path, newline='') as f:
            for n, row in enumerate(csv.reader(f)):
                if not row or (n == 0 and [c.strip() for c in row] == ['path', 'label']):
                    continue
                if len(row) != 2:
                    raise InvalidInput(f"{path}:{n + 1}: expected 'path,label', got {row}")
                image, label = row[0].strip(), row[1].strip()
                entries.append(ManifestEntry(os.path.join(base, image), label))
        if not entries:
            raise InvalidInput(f"manifest {path} has no entries")
        return cls(entries, ratio=ratio, seed=seed)

    def to_csv(self, path: str) -> str:
        base = os.path.dirname(os.path.abspath(path))
        out = io.StringIO()
        writer = csv.writer(out, lineterminator='\n')
        writer.writerow(['path', 'label'])
        for entry in self.entries:
            rel = os.path.relpath(entry.path, base) if os.path.isabs(entry.path) else entry.path
            writer.writerow([rel, entry.label])
        return atomic_write(path, out.getvalue())

    def class_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for entry in self.entries:
            counts[entry.label] = counts.get(entry.label, 0) + 1
        return dict(sorted(counts.items()))


def train_count(n: int, ratio: float) -> int:
    """round(n * ratio) with halves going to train, in exact arithmetic"""
    frac = Fraction(ratio).limit_denominator(10000)
    return (2 * n * frac.numerator + frac.denominator) // (2 * frac.denominator)


def stratified_split(m: DatasetManifest) -> Tuple[List[ManifestEntry], List[ManifestEntry]]:
    """Per-class seeded shuffle and split; classes are visited in label order"""
    rng = np.random.default_rng(m.seed)
    by_class: Dict[str, List[ManifestEntry]] = {}
    for entry in m.entries:
        by_class.setdefault(entry.label, []).append(entry)
    train_part, val_part = [], []
    for label in sorted(by_class):
        members = by_class[label]
        if len(members) < 2:
            raise InvalidInput(f"class '{label}' needs at least 2 samples to split, has {len(members)}")
        order = rng.permutation(len(members))
        k = train_count(len(members), m.ratio)
        train_part.extend(members[i] for i in order[:k])
        val_part.extend(members[i] for i in order[k:])
    return train_part, val_part


def load_samples(
    entries: Sequence[ManifestEntry], role: str, preprocess: Preprocess = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Decoded, preprocessed tensors and label indices for manifest entries"""
    preprocess = preprocess or Preprocess.for_role(role)
    labels = role_labels(role)
    x = np.zeros((len(entries),) + preprocess.input_shape, dtype=np.float32)
    y = np.zeros(len(entries), dtype=np.int64)
    for i, entry in enumerate(entries):
        y[i] = labels.index(parse_label(role, entry.label))
        x[i] = preprocess.to_tensor(read_image(entry.path))
    return x, y


@dataclass
class EvaluationResult:
    accuracy: float
    labels: List[str]
    confusion: List[List[int]]
    total: int
    per_class_accuracy: Dict[str, Optional[float]] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            'accuracy': self.accuracy,
            'labels': self.labels,
            'confusion': self.confusion,
            'total': self.total,
            'per_class_accuracy': self.per_class_accuracy,
        }


def score(truth: Sequence[Label], predicted: Sequence[Label], labels: Sequence[Label]) -> EvaluationResult:
    """Top-1 accuracy and confusion matrix (rows true class, columns
    predicted class, both in `labels` order)"""
    if not truth:
        raise InvalidInput("evaluation needs at least one sample")
    index = {label: i for i, label in enumerate(labels)}
    confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(truth, predicted):
        confusion[index[t], index[p]] += 1
    rows = confusion.sum(axis=1)
    return EvaluationResult(
        accuracy=float(np.trace(confusion)) / len(truth),
        labels=[lbl.value for lbl in labels],
        confusion=confusion.tolist(),
        total=len(truth),
        per_class_accuracy={
            lbl.value: (float(confusion[i, i]) / rows[i] if rows[i] else None)
            for i, lbl in enumerate(labels)
        },
    )


def evaluate(h: ClassifierHandle, samples: Sequence[Tuple[RasterImage, Union[Label, str]]]) -> EvaluationResult:
    if not samples:
        raise InvalidInput("evaluation needs at least one sample")
    truth = [s[1] if isinstance(s[1], Enum) else parse_label(h.role, s[1]) for s in samples]
    unknown = [t for t in truth if t not in h.labels]
    if unknown:
        raise InvalidInput(f"labels {sorted({t.value for t in unknown})} do not belong to a {h.role} classifier")
    predicted = [label for label, _ in h.predict([s[0] for s in samples])]
    return score(truth, predicted, h.labels)


def train_classifier(
    role: str,
    manifest: DatasetManifest,
    solver: SolverConfig = None,
    augment_plan: AugmentationPlan = None,
    preprocess: Preprocess = None,
    dropout: float = 0.5,
) -> Tuple[ClassifierHandle, TrainingResult]:
    """Split, optionally augment the training part, train a SymbolNet-style
    network and wrap it in a handle"""
    labels = role_labels(role)
    solver = solver or (SolverConfig.region() if role == 'region3' else SolverConfig.symbolnet())
    preprocess = preprocess or Preprocess.for_role(role)

    for entry in manifest.entries:
        parse_label(role, entry.label)
    present = set(manifest.class_counts())
    missing = [lbl.value for lbl in labels if lbl.value not in present]
    if missing:
        raise InvalidInput(f"classes {missing} absent from the {role} manifest")

    train_part, val_part = stratified_split(manifest)
    logger.info(f"{role}: {len(train_part)} training and {len(val_part)} validation samples")

    images, y = [], []
    for entry in train_part:
        images.append(read_image(entry.path))
        y.append(labels.index(parse_label(role, entry.label)))
    if augment_plan is not None and augment_plan.ops:
        for i in range(len(train_part)):
            extra = augment(images[i], augment_plan.for_sample(i))
            images.extend(extra)
            y.extend([y[i]] * len(extra))
        logger.info(f"{role}: augmented training set to {len(images)} samples")
    x = np.stack([preprocess.to_tensor(img) for img in images])
    x_val, y_val = load_samples(val_part, role, preprocess)

    net = Network(symbolnet(preprocess.input_shape, len(labels), dropout), preprocess.input_shape, seed=solver.rng_seed)
    result = train(net, x, np.asarray(y, dtype=np.int64), solver, x_val, y_val)
    handle = ClassifierHandle(role, preprocess, net=result.net, source='trained')
    return handle, result
