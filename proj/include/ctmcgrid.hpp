#pragma once

#include "ctmcgrid/ascii_grid.hpp"
#include "ctmcgrid/covariates.hpp"
#include "ctmcgrid/cross_validation.hpp"
#include "ctmcgrid/csv_io.hpp"
#include "ctmcgrid/ctmc.hpp"
#include "ctmcgrid/errors.hpp"
#include "ctmcgrid/glm.hpp"
#include "ctmcgrid/lasso.hpp"
#include "ctmcgrid/model_spec.hpp"
#include "ctmcgrid/multiple_imputation.hpp"
#include "ctmcgrid/path.hpp"
#include "ctmcgrid/pipeline.hpp"
#include "ctmcgrid/raster.hpp"
#include "ctmcgrid/spline.hpp"
