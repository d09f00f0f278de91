"""cimcall: analog compute-in-memory basecalling accelerator toolkit.

Library layout, one module per subsystem:

* :mod:`cimcall.device` - PCM unit-cell physics and the analog VMM
* :mod:`cimcall.network` - basecaller graphs and reference inference
* :mod:`cimcall.decoder` - exact, greedy, and streaming CRF-CTC decoders
* :mod:`cimcall.mapping` - layer placement onto the tiled 2-D mesh
* :mod:`cimcall.meshsim` - micro-op expansion, scheduling, reporting
* :mod:`cimcall.analog` - quantized noisy inference on programmed tiles
* :mod:`cimcall.pipeline` - squiggle synthesis, chunk/stitch, metrics
* :mod:`cimcall.benchmark` - the synthetic toy benchmark fixture
* :mod:`cimcall.config` / :mod:`cimcall.cli` - experiment configs and
  the command line front end
"""

from .device import (
    DeviceParams,
    ConductancePair,
    ProgrammedTile,
    map_weight_to_conductance,
    apply_programming_noise,
    apply_drift,
    analog_vmm,
)
from .network import (
    LayerSpec,
    NetworkGraph,
    TransitionFrames,
    build_dorado_fast,
    build_al_dorado,
    infer_reference,
    lstm_step,
    save_weights,
    load_weights,
)
from .decoder import (
    LAParams,
    MoveSequence,
    full_crf_decode,
    greedy_decode,
    lookaround_decode,
    LookAroundDecoder,
    decoder_cost,
    collapse_moves,
)
from .mapping import ArchDescription, Mapping, map_network, validate_mapping
from .meshsim import CostTable, build_job_graph, schedule, report, peak_compute
from .analog import (
    ProgrammedSystem,
    program_network,
    infer_analog,
    layer_sensitivity_sweep,
    drift_sweep,
)
from .pipeline import (
    PoreModel,
    SquiggleRead,
    ChunkPlan,
    synth_squiggle,
    chunk,
    stitch,
    aligned_accuracy,
    data_reduction_report,
)

__version__ = "0.1.0"
