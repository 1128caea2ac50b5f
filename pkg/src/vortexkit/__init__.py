"""vortexkit: S1-valued grid fields with jump sets, weak Jacobians, flat
norms, ball-construction singularity detection, and energy-scaling scans."""

from .geometry import Ball, BallFamily, Domain, Point2, Rect, enclosing_ball, merge_family
from .grid_field import (Grid, S1Field, gradient, jump_length, load_field,
                         make_constant_field, make_recovery_field,
                         make_smooth_field, make_winding_field, save_field)
from .jacobian import (CurrentJ, TestFunction, degree_on_circle, ju_apply,
                       lambda_field, plaquette_vorticity)
from .measures import (AtomicMeasure, FlatNormResult, flat_distance_atomic,
                       flat_distance_current, flat_distance_grid_atoms,
                       total_variation)
from .energy import (EnergyBreakdown, R2Field, annulus_min_energy, cr_energy,
                     f_eps, gl_energy)
from .singularities import (DipoleFamilies, GrownFamily, ball_grow,
                            cluster_cover, cover_jump_set, detect,
                            dipole_eliminate, extract_mu_hat, extract_mu_tilde,
                            fatten_nonzero)
from .gamma import (ScanConfig, ScanReport, run_compactness_scan,
                    run_dirichlet_scan, run_limsup_scan, run_scan)

__version__ = "0.1.0"
