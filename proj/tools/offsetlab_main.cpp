#include <string>
#include <vector>

#include <CLI11.hpp>

#include "offsetlab/report.hpp"
#include "offsetlab/version.hpp"

namespace {

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    size_t start = 0;
    while (start <= csv.size()) {
        size_t pos = csv.find(',', start);
        std::string tok =
            pos == std::string::npos ? csv.substr(start) : csv.substr(start, pos - start);
        if (!tok.empty()) out.push_back(std::stod(tok));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

std::vector<std::string> parse_string_list(const std::string& csv) {
    std::vector<std::string> out;
    size_t start = 0;
    while (start <= csv.size()) {
        size_t pos = csv.find(',', start);
        std::string tok =
            pos == std::string::npos ? csv.substr(start) : csv.substr(start, pos - start);
        if (!tok.empty()) out.push_back(tok);
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string(offsetlab::kToolName) +
                 " - adaptive offset cache correction for a toy diffusion transformer"};
    app.require_subcommand(1);
    app.set_version_flag("--version",
                         std::string(offsetlab::kToolName) + " " + offsetlab::kToolVersion);

    std::string config_path;
    std::string out_dir;
    bool trace_images = false;
    std::string gamma_list;
    std::string lambda_list;
    std::string policy_list;

    CLI::App* run = app.add_subcommand("run", "single run (or scene sequence) plus reference");
    run->add_option("--config", config_path, "config JSON path")->required();
    run->add_option("--out", out_dir, "output directory")->required();
    run->add_flag("--trace-images", trace_images, "decode and trace the image at every step");

    CLI::App* sweep = app.add_subcommand("sweep", "grid over gamma and lambda_spatial");
    sweep->add_option("--config", config_path, "config JSON path")->required();
    sweep->add_option("--out", out_dir, "output directory")->required();
    sweep->add_option("--gamma", gamma_list, "comma-separated gamma values (default 0.5,1,2)");
    sweep->add_option("--lambda", lambda_list,
                      "comma-separated lambda_spatial values (default 0.5,1,2)");

    CLI::App* compare = app.add_subcommand("compare", "policy-vs-policy at a shared workload");
    compare->add_option("--config", config_path, "config JSON path")->required();
    compare->add_option("--out", out_dir, "output directory")->required();
    compare->add_option("--policies", policy_list,
                        "comma-separated policies, e.g. FullRecompute,StaticInterval:4,Adaptive")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (run->parsed()) return offsetlab::cmd_run(config_path, out_dir, trace_images);
        if (sweep->parsed()) {
            return offsetlab::cmd_sweep(config_path, out_dir, parse_double_list(gamma_list),
                                        parse_double_list(lambda_list));
        }
        if (compare->parsed()) {
            return offsetlab::cmd_compare(config_path, out_dir, parse_string_list(policy_list));
        }
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
    return 2;
}
