"""Python bindings for the glam graph-learning and matching network."""

from ._core import (  # noqa: F401
    ContractError,
    Dataset,
    NetworkConfig,
    Parameters,
    TrainConfig,
    __version__,
    evaluate,
    forward,
    generate_dataset,
    gradient_check,
    hungarian,
    make_template,
    run_cli,
    sinkhorn,
    train,
)
