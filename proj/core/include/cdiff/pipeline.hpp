#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdiff/estimators.hpp"
#include "cdiff/mrf.hpp"
#include "cdiff/panel.hpp"
#include "cdiff/placebo.hpp"
#include "cdiff/sim_lab.hpp"

namespace cdiff {

inline constexpr int kReportSchemaVersion = 1;
const char* software_version();

// --- config blocks ------------------------------------------------------------

struct PanelSource {
    std::string file;  // as written in the config
    PanelSchema schema;
};

struct WeightsSource {
    enum class Kind { EdgeList, Coordinates, Bipartite };
    Kind kind = Kind::Coordinates;
    std::string file;
    std::optional<int> nearest;          // coordinates
    std::optional<double> max_distance;  // coordinates
    std::optional<int> year;             // bipartite: one static matrix for this year
    bool row_standardize = false;        // applied after loading (coordinates already are)
};

struct NamedControlSet {
    std::string label;
    ControlSpec control;
};

struct AnalysisConfig {
    std::string name;
    std::filesystem::path base_dir;  // input paths are relative to this
    PanelSource panel;
    WeightsSource weights;
    EstimandSpec estimand;
    std::vector<NamedControlSet> control_sets;
    std::optional<ModeratorSpec> moderator;
    bool diagnostics = true;
    std::string report_path;  // relative to the working directory
    std::string plot_path;
    std::uint64_t seed = 1;
    unsigned threads = 0;
};

// Throws ConfigError naming the offending field.
AnalysisConfig analysis_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
AnalysisConfig load_analysis_config(const std::string& path);
nlohmann::json control_to_json(const ControlSpec& c, const std::string& label = "");
ControlSpec control_from_json(const nlohmann::json& j);
VariableMeta variable_from_json(const nlohmann::json& j);
nlohmann::json weights_to_json(const WeightsSource& w);
nlohmann::json variable_to_json(const VariableMeta& v);

struct AnalysisInputs {
    PanelDataset panel;
    WeightMatrix weights;
};

// Loads data and weights, then checks that every referenced column exists.
AnalysisInputs load_inputs(const AnalysisConfig& config);
void validate_columns(const AnalysisConfig& config, const PanelDataset& panel);

// --- analyze --------------------------------------------------------------------

nlohmann::json run_analysis(const AnalysisConfig& config, const AnalysisInputs& inputs);
nlohmann::json run_analysis(const AnalysisConfig& config);

// Placebo sets for every control set of a config.
nlohmann::json placebo_sets_json(const AnalysisConfig& config);

// --- select ---------------------------------------------------------------------

struct SelectionConfig {
    AnalysisConfig analysis;
    SelectionSpec spec;
    MrfOptions mrf;
    double alpha = 0.05;
    std::string output_path;
};

SelectionConfig load_selection_config(const std::string& path);
SelectionConfig selection_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
// Graph, selection and the selected control set in config format.
nlohmann::json run_selection(const SelectionConfig& config);

// --- simulate -------------------------------------------------------------------

struct SuiteEntry {
    std::string name;
    nlohmann::json scenario;  // builtin name, {"file": ...} or an inline scenario
    std::string estimator = "placebo";  // placebo | bias_correction
    std::vector<nlohmann::json> ladder;  // {"label", "control"} for placebo entries
    nlohmann::json control;              // bias_correction entries
    std::size_t replications = 1000;
    std::optional<std::uint64_t> seed;
    double alpha = 0.05;
};

struct SimulationSuite {
    std::filesystem::path base_dir;
    std::vector<SuiteEntry> entries;
    std::uint64_t seed = 1;
    unsigned threads = 0;
    std::string output_path;
};

SimulationSuite suite_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
SimulationSuite load_suite(const std::string& path);
// A failing entry is reported with its error; the others still run.
nlohmann::json run_simulation_suite(const SimulationSuite& suite);

// --- forest plot ----------------------------------------------------------------

// Three panels (placebo | main | bias-corrected), one slot per control set.
std::string forest_plot_svg(const nlohmann::json& report);
void emit_forest_plot(const nlohmann::json& report, const std::string& path);

// Two-space indented dump plus trailing newline.
std::string dump_report(const nlohmann::json& j);
void write_text(const std::string& path, const std::string& text);
nlohmann::json read_json_file(const std::string& path);

} // namespace cdiff
