"""Desk-scale simulator of non-local gates between two atom-cavity nodes.

Two spatially separated processors, each one atom in one cavity mode, share
entanglement and classical bits to enact a CNOT or a controlled-phase gate
between their cavity qubits.  Every gate exists twice: as an ideal unitary
oracle and as a pulse-level physical simulation (time-dependent Schrodinger
integration of the driven Jaynes-Cummings model).
"""

from .qstate import (
    TOLERANCES,
    CompositeSpace,
    FactorLabel,
    Operator,
    QStateError,
    StateVector,
    embed,
    enumerate_branches,
    make_rng,
    measure_factor,
    state_fidelity,
    tensor,
)
from .jcmodel import (
    DressedPair,
    JCParams,
    desk_params,
    dressed_energies,
    dressed_pair,
    jc_hamiltonian,
    jc_rotating,
    jc_space,
    resonant_rabi_evolve,
    set_stark_detuning,
)
from .pulses import (
    DriveHamiltonian,
    PulseSpec,
    calibrate_pulse_area,
    dressed_block_3x3,
    dressed_block_4x4,
    drive_hamiltonian_bare,
    evolve_tdse,
)
from .perturb import (
    TwoPhotonParams,
    calibrate_convention,
    two_photon_amplitude,
    two_photon_probability,
    two_photon_tdse_oracle,
)
from .gates import (
    GateKind,
    GateResult,
    PhysicalGateConfig,
    ThreeLevelParams,
    averaged_step5_fidelity,
    fidelity_closed_form,
    ideal_gate,
    physical_cnot_atom_to_cavity,
    physical_cnot_cavity_to_atom,
    physical_cqpg_local,
    physical_hadamard_atom,
    physical_not_atom,
    physical_swap_two_photon,
)
from .protocol import (
    TRUE_HADAMARD,
    BranchResult,
    ClassicalChannel,
    Node,
    PhotonGunModel,
    ProtocolConfig,
    ProtocolError,
    ProtocolTrace,
    beam_splitter_mix,
    enumerate_ebit_branches,
    locality_violations,
    monte_carlo_gun_fidelity,
    prepare_ebit,
    prepare_register,
    run_nonlocal_cnot,
    run_nonlocal_cqpg,
)

__version__ = "0.1.0"

__all__ = [
    "TOLERANCES",
    "CompositeSpace",
    "FactorLabel",
    "Operator",
    "QStateError",
    "StateVector",
    "embed",
    "enumerate_branches",
    "make_rng",
    "measure_factor",
    "state_fidelity",
    "tensor",
    "DressedPair",
    "JCParams",
    "desk_params",
    "dressed_energies",
    "dressed_pair",
    "jc_hamiltonian",
    "jc_rotating",
    "jc_space",
    "resonant_rabi_evolve",
    "set_stark_detuning",
    "DriveHamiltonian",
    "PulseSpec",
    "calibrate_pulse_area",
    "dressed_block_3x3",
    "dressed_block_4x4",
    "drive_hamiltonian_bare",
    "evolve_tdse",
    "TwoPhotonParams",
    "calibrate_convention",
    "two_photon_amplitude",
    "two_photon_probability",
    "two_photon_tdse_oracle",
    "GateKind",
    "GateResult",
    "PhysicalGateConfig",
    "ThreeLevelParams",
    "averaged_step5_fidelity",
    "fidelity_closed_form",
    "ideal_gate",
    "physical_cnot_atom_to_cavity",
    "physical_cnot_cavity_to_atom",
    "physical_cqpg_local",
    "physical_hadamard_atom",
    "physical_not_atom",
    "physical_swap_two_photon",
    "TRUE_HADAMARD",
    "BranchResult",
    "ClassicalChannel",
    "Node",
    "PhotonGunModel",
    "ProtocolConfig",
    "ProtocolError",
    "ProtocolTrace",
    "beam_splitter_mix",
    "enumerate_ebit_branches",
    "locality_violations",
    "monte_carlo_gun_fidelity",
    "prepare_ebit",
    "prepare_register",
    "run_nonlocal_cnot",
    "run_nonlocal_cqpg",
]
