#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hte/propensity.hpp"
#include "hte/simbench.hpp"
#include "hte/types.hpp"

namespace hte {

struct CsvSchema {
  std::string treatment_col = "T";
  std::string response_col = "Y";
};

/// Strict numeric CSV with a mandatory header. The named treatment/response
/// columns are extracted; every remaining column becomes a feature in header
/// order. Parse failures name the line and column.
Dataset load_csv(const std::string& path, const CsvSchema& schema = {});

/// Feature table only (no treatment/response required). Columns named by the
/// schema are dropped when present.
Matrix load_feature_csv(const std::string& path, std::vector<std::string>& names,
                        const CsvSchema& schema = {});

void write_dataset_csv(std::ostream& os, const Dataset& d);
void write_truth_csv(std::ostream& os, std::span<const double> tau,
                     std::span<const double> pi);
void write_effects_csv(std::ostream& os, const EffectEstimates& est);
EffectEstimates load_effects_csv(const std::string& path);

/// Columns: n, ratio, var_to, var_cm, reps.
void write_variance_study_csv(std::ostream& os, std::span<const VarianceStudyRow> rows);

}  // namespace hte
