"""Truth-table circuit compiler and runtime for lookup-table FHE backends.

Pipeline: a model file (ttir) is lowered to a lookup-table circuit
(circuit) whose tables come from exhaustive block enumeration (ltt) and
whose final layer is 4-bit quantized into binary planes (quant). The
engine evaluates circuits bit-exactly, the cost module prices encrypted
execution, and the protocol module runs the client/server split over TCP.
"""

from .circuit import (
    ChunkPlan,
    Circuit,
    ConstraintReport,
    LutCall,
    check_constraints,
    compile_model,
    load_circuit,
    parse_circuit,
    plan_chunks,
    save_circuit,
    serialize_circuit,
)
from .engine import (
    EvalTrace,
    Evaluator,
    InferenceResult,
    eval_cleartext,
    eval_float,
    eval_simulated,
)
from .errors import (
    ConstraintViolation,
    DegenerateError,
    FrameError,
    InvariantError,
    ParseError,
    SchemaError,
    ShapeError,
    TTCError,
    UnknownModelError,
)
from .ltt import (
    PatchGeometry,
    TruthTable,
    bin_act,
    extract_all_tables,
    extract_truth_table,
    ltt_forward,
    receptive_field,
    selu,
)
from .quant import QuantLinear, quantize_linear, recombine
from .ttir import (
    BatchNormSpec,
    ConvLayerSpec,
    FrontEnd,
    HeadSpec,
    LinearLayerSpec,
    LTTBlockSpec,
    ModelSpec,
    load_model,
    parse_model,
    save_model,
    serialize_model,
)

__version__ = "0.1.0"
