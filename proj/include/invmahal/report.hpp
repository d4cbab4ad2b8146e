#pragma once

// Plain-text and CSV renderings of evaluation results. Report bodies carry no
// timings so that reruns with the same seed produce identical files; timings
// go to their own CSV.

#include <filesystem>
#include <span>
#include <string>

#include "invmahal/core.hpp"
#include "invmahal/harness.hpp"

namespace invmahal {

/// key=value lines: config.* from the first report, then
/// <task>.<method>.{error_rate,error_std,errors,total,failures,...}.
std::string format_report(std::span<const EvalReport> reports);

/// task,method,error_rate,error_std,errors,total,failures
std::string format_report_csv(std::span<const EvalReport> reports);

/// task,method,stage,seconds
std::string format_timings_csv(std::span<const EvalReport> reports);

/// Machine lines as '#' comments, then one row per grid point.
std::string format_bench_csv(const BenchTable& table);

/// Writes <stem>.txt, <stem>.csv and <stem>.timings.csv.
void write_reports(const std::filesystem::path& stem, std::span<const EvalReport> reports);

}  // namespace invmahal
