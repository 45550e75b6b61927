#pragma once

// Umbrella header: the whole toolkit in one include.

#include "segvae/errors.hpp"        // error hierarchy mapped to exit codes
#include "segvae/rng.hpp"           // keyed deterministic random streams
#include "segvae/parallel.hpp"      // worker pool and memory budget tracking
#include "segvae/memory.hpp"        // live/peak byte accounting
#include "segvae/volume.hpp"        // 3-D scalar/label grids
#include "segvae/nifti.hpp"         // NIfTI-1 reading and writing
#include "segvae/tensor.hpp"        // [C, Z, Y, X] float tensors
#include "segvae/nn.hpp"            // layers with exact backward passes
#include "segvae/losses.hpp"        // dice / L2 / KL and the LR schedule
#include "segvae/model.hpp"         // U-Net with variational decoder branch
#include "segvae/gradcheck.hpp"     // finite-difference gradient audits
#include "segvae/pipeline.hpp"      // cases, patches, augmentation, phantoms
#include "segvae/registration.hpp"  // affine alignment + searchlight maps
#include "segvae/metrics.hpp"       // dice / sensitivity / specificity / HD95
#include "segvae/inference.hpp"     // budgeted sliding-window prediction
#include "segvae/trainer.hpp"       // training loop with early stopping
#include "segvae/runconfig.hpp"     // flat key=value run configuration
#include "segvae/experiment.hpp"    // end-to-end reproducible experiment
