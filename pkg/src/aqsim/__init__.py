"""Amplitude-quanta simulator: reaction-kinetics evolution of state vectors."""

from .core import (ALPHA, BETA, AmplitudeQuantum, Bubble, Gas, MembraneCell,
                   QuantumType, VirtualState, apply_reduction,
                   bubble_from_state, probability_weights, replenish,
                   state_from_bubble)
from .compiler import (MembraneSchedule, PauliBlock, ReactionList,
                       ReactionRule, membrane_schedule, pauli_decompose,
                       phase_rules, reactions_for_block, reconstruct,
                       sq_reactions)
from .oracle import (chi_square_test, exact_propagate, fidelity, propagator,
                     schedule_propagate)
from .engine import EngineConfig, evolve, evolve_lists, meanfield_evolve
from .errors import (AllCountsZero, AlreadyReal, ConfigError, CountOverflow,
                     EscapedQuantum, InvalidOutcome, IoError, Timeout,
                     TooFewWorkers)
from .measurement import (MeasurementRecord, detect_split, measure,
                          rebuild_after_measurement)
from .membrane import (Membrane, MembraneConfig, bubble_centroid,
                       build_membrane, embed_on_lattice, update_membrane)
from .multiparticle import (JointSystem, couple_bubbles, decohere_components,
                            evolve_joint, exchange_bosons, exchange_fermions,
                            joint_from_state, reduced_density_matrix)
from .spatial import (calibrate_contact_rate, evolve_spatial, hash_u01,
                      populate_gas)
from .harness import (MultiSpec, PartitionedRun, RunConfig, compile_report,
                      evolve_partitioned, load_run_config, run,
                      run_partitioned_faulty, slab_edges, total_variation)
from .snapshots import (TrajectoryWriter, canonical_json, write_ppm,
                        write_report)

__version__ = "0.1.0"
