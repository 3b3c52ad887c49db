"""powermask: a desk-scale power side-channel defense and its adversaries.

The defended machine is a simulated plant whose power responds to three
actuators (DVFS, idle injection, a compute balloon). A mask generator emits
power targets with chosen statistical signatures; a model-based controller
drives the plant's measured power onto those targets; attack and analysis
modules then try, and are expected to fail, to recover which application was
running from the shaped traces.

Layer map, inner to outer:

    plant       simulated machine: actuator grids, power model, sensor
    workloads   synthetic applications and their demand signals
    sysid       excitation and ARX fitting of the plant around its
                operating point
    controller  LQG tracking controller synthesized from the fitted model
    mask        target generators and their spectral signature table
    harness     single runs, trace files, overhead accounting
    campaign    the full seeded experiment grid with attacks and analyses
    attack      trace segmentation, quantized features, MLP classifier
    analysis    FFT, peak finding, change points, run averaging
"""

from .analysis import (AveragingStats, ChangePointReport, Peak, Spectrum,
                       averaging_study, change_points, detect_peaks,
                       fft_magnitude)
from .attack import (Mlp, SampleVector, TrainReport, accuracy, confusion,
                     grad_check, init_mlp, load_mlp, load_samples, predict,
                     preprocess, save_mlp, save_samples, stratified_split,
                     train)
from .campaign import CampaignConfig, run_campaign, run_seed
from .controller import (ControllerDivergence, ControllerMatrices,
                         ControllerState, RobustnessReport,
                         closed_loop_spectral_radius, control_step,
                         init_controller, robustness_check, simulate_loop,
                         synthesize)
from .harness import (BASELINE, CONDITIONS, MASK_FAMILY, NOISY_BASELINE,
                      OverheadReport, PowerTrace, completion_sample,
                      is_shaped, load_trace, overhead_report,
                      phase_boundary_samples, run_once, save_trace,
                      service_rate)
from .mask import (FAMILIES, HOLD_RANGE, MaskProgram, MaskRanges,
                   SIGNATURE_TABLE, SignatureThresholds, SpectralSignature,
                   expected_signature, new_mask, next_target,
                   signature_booleans, spectral_signature)
from .plant import (ActuatorSetting, BUILTIN_PROFILES, MachineProfile,
                    PlantState, init_plant, load_profile, profile_hash,
                    quantize_setting, step_plant, sys1_profile, sys2_profile)
from .sysid import ArxModel, excite, fit_arx, fit_ratio, identify, simulate_arx
from .workloads import (PhaseSpec, WorkloadSpec, builtin_suite, demand_at,
                        noise_free_demand, repeated, suite_by_id,
                        validate_workload)

__version__ = "0.1.0"
