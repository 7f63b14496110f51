"""Array file I/O, data simulation, metrics, weights bundles and the command-line driver."""

from .bundle import FORMAT_VERSION, BundleError, load_bundle, save_bundle
from .cfl import (FILE_DIMS, CorruptFileError, ShapeError, cfl_read, cfl_write, from_internal, read_array,
                  read_header, read_internal, to_internal, write_array, write_internal)
from .metrics import eval_metrics, per_slice
from .reconet import NETWORKS, ConfigError, build_network, network_config, prepare, reconet_apply, reconet_train
from .simulate import coil_maps, phantom, sampling_lines, simulate
