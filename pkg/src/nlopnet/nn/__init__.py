"""Complex-valued network layers, losses and the named-argument model."""

from .blocks import activation, batchnorm, conv, dense, dropout, maxpool
from .conv import Conv, ConvGeometry, ConvTransposed, correlate
from .layers import (INFER, TRAIN, Affine, BatchNorm, Cardioid, CReLU, Dense, Dropout, MaxPool, Sigmoid,
                     Softmax)
from .losses import CCE, MAD, MSE, loss
from .model import (DATA, STAT, WEIGHT, Init, Model, chain, combine, connect, constant, del_output, dup, fixed,
                    glorot, link, prefix, project_nonnegative, rename, reorder, reorder_outputs, sequential,
                    weight_rng)
