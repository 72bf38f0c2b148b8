"""Small experiment configs shared by the experiment, CLI and acceptance tests."""

from pathlib import Path


def small_vibration_ini(out: Path, seed: int = 0, variants: str = "CNN, KCNN-d3") -> str:
    return f"""[experiment]
name = vibration-ad
seed = {seed}
out = {out}

[model]
variants = {variants}

[train]
optimizer = adam
learning_rate = 0.002
batch_size = 16
max_epochs = 3
patience = 2

[data]
n_train = 40
n_normal = 6
n_abnormal = 6

[detector]
window_length = 128

[synth]
sample_length = 256
"""


def small_har_classify_ini(out: Path, har_root: Path, seed: int = 0, builder: str = "simplified-cnn",
                           cv_folds: int = 2, grid: bool = False, max_epochs: int = 2) -> str:
    return f"""[experiment]
name = har-classify
seed = {seed}
out = {out}

[model]
builder = {builder}
grid = {str(grid).lower()}
cv_folds = {cv_folds}

[train]
optimizer = adam
learning_rate = 0.002
batch_size = 32
max_epochs = {max_epochs}
patience = 1

[data]
har_root = {har_root}
"""


def small_har_ad_ini(out: Path, har_root: Path, seed: int = 0) -> str:
    return f"""[experiment]
name = har-ad
seed = {seed}
out = {out}

[model]
variants = conv, kerv-d3

[train]
optimizer = adam
learning_rate = 0.002
batch_size = 16
max_epochs = 2
patience = 1

[data]
har_root = {har_root}
"""


# Adam with an absurd step on the BN-free kervolutional autoencoder overflows
# within a few batches.
DIVERGING_INI = """[experiment]
name = vibration-ad
seed = 0
out = {out}

[model]
variants = KCNN-Kp

[train]
optimizer = adam
learning_rate = 1e8
momentum = 0.9
batch_size = 8
max_epochs = 5
patience = 2

[data]
n_train = 20
n_normal = 2
n_abnormal = 2

[synth]
sample_length = 512
"""


def write_ini(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


# criterion number -> "PASS ..." / "FAIL ..." line, printed in the terminal summary
ACCEPTANCE_LINES: dict = {}
