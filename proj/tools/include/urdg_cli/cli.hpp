#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace urdg::cli {

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

/// Runs one `urdg <command> ...` invocation; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// File names inside a run directory.
namespace artifact {
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kConfig = "config.json";
inline constexpr const char* kCheckpoint = "checkpoint.json";
inline constexpr const char* kHistory = "history.csv";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kEmbeddings = "embeddings.csv";
}  // namespace artifact

/// First free `<parent>/<stem>`, `<stem>-1`, `<stem>-2`, ...
std::filesystem::path fresh_run_dir(const std::filesystem::path& parent, const std::string& stem);

/// SVG renderings of run artifacts; byte-identical for identical input.
std::string render_loss_svg(const std::string& history_csv);
std::string render_embedding_svg(const std::string& embedding_csv);

}  // namespace urdg::cli
