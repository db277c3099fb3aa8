// Generated from cfg/deepsperm.cfg at configure time; do not edit.
#include "spermdet/netdef.hpp"

namespace spermdet {

const char* reference_cfg() {
    static const char text[] = R"__cfg__(# DeepSperm reference network (reconstruction).
# Single-scale stride-8 detector: a 7-convolution stem with three stride-2
# stages (640 -> 80), 12 residual blocks of (1x1 reduce, 3x3 expand,
# shortcut) on a 224-channel trunk, dropout 0.5 right after the first
# shortcut, and a single 18-filter 1x1 head feeding one yolo layer.
# The published layout is not fully legible, so the channel plan
# (32-64-64-112-112-224-224 stem, 112 reduce, 224 trunk) was chosen to
# land near the published 14.2 MB weights size. Anchors are placeholders;
# regenerate with the `anchors` subcommand for a new annotation set.

[net]
width=640
height=640
channels=3
batch=64
subdivisions=16
momentum=0.9
decay=0.0005
learning_rate=0.001
burn_in=250
max_batches=4000
steps=1000
scales=.1
saturation=1.5
exposure=1.5
hue=.1

# stem

[convolutional]
batch_normalize=1
filters=32
size=3
stride=1
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=64
size=3
stride=2
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=64
size=3
stride=1
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=112
size=3
stride=2
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=112
size=3
stride=1
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=224
size=3
stride=2
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=224
size=3
stride=1
pad=1
activation=leaky

# residual trunk: 12 x (1x1 reduce, 3x3 expand, shortcut)

[convolutional]
batch_normalize=1
filters=112
size=1
stride=1
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=224
size=3
stride=1
pad=1
activation=leaky

[shortcut]
from=-3
activation=linear

[dropout]
probability=.5

[convolutional]
batch_normalize=1
filters=112
size=1
stride=1
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=224
size=3
stride=1
pad=1
activation=leaky

[shortcut]
from=-3
activation=linear

[convolutional]
batch_normalize=1
filters=112
size=1
stride=1
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=224
size=3
stride=1
pad=1
activation=leaky

[shortcut]
from=-3
activation=linear

[convolutional]
batch_normalize=1
filters=112
size=1
stride=1
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=224
size=3
stride=1
pad=1
activation=leaky

[shortcut]
from=-3
activation=linear

[convolutional]
batch_normalize=1
filters=112
size=1
stride=1
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=224
size=3
stride=1
pad=1
activation=leaky

[shortcut]
from=-3
activation=linear

[convolutional]
batch_normalize=1
filters=112
size=1
stride=1
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=224
size=3
stride=1
pad=1
activation=leaky

[shortcut]
from=-3
activation=linear

[convolutional]
batch_normalize=1
filters=112
size=1
stride=1
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=224
size=3
stride=1
pad=1
activation=leaky

[shortcut]
from=-3
activation=linear

[convolutional]
batch_normalize=1
filters=112
size=1
stride=1
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=224
size=3
stride=1
pad=1
activation=leaky

[shortcut]
from=-3
activation=linear

[convolutional]
batch_normalize=1
filters=112
size=1
stride=1
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=224
size=3
stride=1
pad=1
activation=leaky

[shortcut]
from=-3
activation=linear

[convolutional]
batch_normalize=1
filters=112
size=1
stride=1
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=224
size=3
stride=1
pad=1
activation=leaky

[shortcut]
from=-3
activation=linear

[convolutional]
batch_normalize=1
filters=112
size=1
stride=1
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=224
size=3
stride=1
pad=1
activation=leaky

[shortcut]
from=-3
activation=linear

[convolutional]
batch_normalize=1
filters=112
size=1
stride=1
pad=1
activation=leaky

[convolutional]
batch_normalize=1
filters=224
size=3
stride=1
pad=1
activation=leaky

[shortcut]
from=-3
activation=linear

# detection head

[convolutional]
size=1
stride=1
pad=1
filters=18
activation=linear

[yolo]
anchors = 8,14,  10,18,  14,24
classes=1
ignore_thresh=.7
)__cfg__";
    return text;
}

}  // namespace spermdet
