"""Simulator of echo state graph neural networks on random resistor arrays."""

__version__ = "0.1.0"

from .device import (  # noqa: E402
    CrossbarArray,
    DeviceModel,
    QuantConfig,
    VmmStats,
    analog_vmm,
    analog_vmm_batch,
    form_random_array,
    load_array,
    quantization_error_bound,
    save_array,
    spectral_radius,
)
from .energy import (  # noqa: E402
    EnergyModel,
    GraphStats,
    OpCounter,
    calibrate,
    count_ops,
    count_training_ops,
    energy_report,
)
from .evaluation import (  # noqa: E402
    CvReport,
    TrialReport,
    grid_search,
    kfold_cv,
    project_2d,
    repeated_trials,
    stratified_folds,
)
from .exceptions import (  # noqa: E402
    ConfigurationError,
    DataError,
    EchoStateError,
    EsgnnError,
    NumericalError,
    ParseError,
    ShapeError,
)
from .graphdata import (  # noqa: E402
    Dataset,
    GraphData,
    build_features,
    cora_dataset,
    parse_cora,
    parse_tudataset,
    subsample,
)
from .model import ESGNNEmbedder, EsgnnConfig, EsgnnModel, NodeStates  # noqa: E402
from .readout import (  # noqa: E402
    GraphConvClassifier,
    GraphConvHyperparams,
    GraphConvReadout,
    LinearReadout,
    LinearReadoutClassifier,
    fit_graphconv,
    fit_linear,
    normalized_adjacency,
    predict_graphconv,
    predict_linear,
)

__all__ = [name for name in dir() if not name.startswith("_")]
