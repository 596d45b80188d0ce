// c3v: compose splat assets into animated, deterministically rendered video
// frames. Stages: plan (director trajectory protocol), lift (2D -> 3D),
// refine (score-guided placement), render (tiled splatting).

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "c3v/errors.hpp"
#include "c3v/pipeline.hpp"

namespace {

struct CliOptions {
  c3v::JobConfig job;
  std::string res;
  std::string up_axis = "neg_y";
  std::string resample = "constant_speed";
  double fd_step = 0;  // 0 = 1e-3 * scene radius
};

void apply_common(CLI::App* cmd, CliOptions& opt) {
  cmd->add_option("--manifest", opt.job.manifest_path, "Scene manifest JSON")
      ->required();
  cmd->add_option("--out", opt.job.out_dir, "Output directory (default: out)");
  cmd->add_option("--director", opt.job.director_mode,
                  "Director mode: mock, live, replay")
      ->check(CLI::IsMember({"mock", "live", "replay"}));
  cmd->add_option("--fixtures", opt.job.fixtures_path,
                  "Mock director fixture table (JSON)");
  cmd->add_option("--audit-replay", opt.job.replay_log,
                  "Audit log to replay in replay mode");
  cmd->add_option("--provider", opt.job.provider,
                  "Score provider: zero, pull, silhouette, ground, remote")
      ->check(CLI::IsMember({"zero", "pull", "silhouette", "ground", "remote"}));
  cmd->add_option("--provider-target", opt.job.provider_target,
                  "Target framebuffer dump for pull/silhouette providers");
  cmd->add_option("--provider-horizon", opt.job.provider_horizon,
                  "Horizon row for the ground provider");
  cmd->add_option("--provider-gain", opt.job.provider_gain,
                  "Residual gain for mock providers");
  cmd->add_option("--seed", opt.job.seed, "Seed override (default: manifest seed)");
  cmd->add_option("--frames", opt.job.frame_count,
                  "Frame count override (default: manifest)");
  cmd->add_option("--res", opt.res, "Resolution override, WxH (e.g. 512x512)");
  cmd->add_option("--n-path-points", opt.job.n_path_points,
                  "Path points requested from the director (default: 8)");
  cmd->add_option("--tau-s", opt.job.tau_s,
                  "Scale threshold (default: 0.4 * estimated scale)");
  cmd->add_option("--tau-l", opt.job.tau_l,
                  "Location threshold (default: 0.3 * object height)");
  cmd->add_option("--up-axis", opt.up_axis, "Scene up axis (default: neg_y)")
      ->check(CLI::IsMember({"pos_x", "neg_x", "pos_y", "neg_y", "pos_z", "neg_z"}));
  cmd->add_option("--resample", opt.resample, "Trajectory resampling mode")
      ->check(CLI::IsMember({"constant_speed", "uniform_parameter"}));
  cmd->add_option("--external-depth", opt.job.external_depth,
                  "External depth map (PFM) replacing rendered depth");
  cmd->add_option("--external-depth-scale", opt.job.external_depth_scale,
                  "Scale alignment for external depth");
  cmd->add_option("--step-size", opt.job.refine.step_size,
                  "Refinement gradient step (default: 0.05)");
  cmd->add_option("--max-iterations", opt.job.refine.max_iterations,
                  "Refinement iteration cap (default: 200)");
  cmd->add_option("--fd-step", opt.fd_step,
                  "Finite-difference step (default: 1e-3 * scene radius)");
  cmd->add_flag("--joint-locations", opt.job.refine.joint_locations,
                "Optimize all path points jointly instead of sequentially");
  cmd->add_flag("--audit-mock", opt.job.audit_mock,
                "Write the director audit log in mock/replay mode too");
  cmd->add_flag("--force", opt.job.force, "Ignore the stage cache");
  cmd->add_flag("-v,--verbose", opt.job.verbosity, "Verbose logging");
}

void finalize(CliOptions& opt) {
  if (!opt.res.empty()) {
    const auto x = opt.res.find('x');
    if (x == std::string::npos) {
      throw c3v::Error(c3v::ErrorKind::config, "--res must look like 512x512");
    }
    try {
      opt.job.res_w = std::stoi(opt.res.substr(0, x));
      opt.job.res_h = std::stoi(opt.res.substr(x + 1));
    } catch (const std::exception&) {
      throw c3v::Error(c3v::ErrorKind::config, "--res must look like 512x512");
    }
    if (opt.job.res_w <= 0 || opt.job.res_h <= 0) {
      throw c3v::Error(c3v::ErrorKind::config, "--res dimensions must be positive");
    }
  }
  opt.job.up_axis = c3v::up_axis_from_name(opt.up_axis);
  opt.job.resample_mode = opt.resample == "uniform_parameter"
                              ? c3v::ResampleMode::uniform_parameter
                              : c3v::ResampleMode::constant_speed;
  opt.job.refine.fd_step = opt.fd_step;
  if (const char* url = std::getenv("C3V_DIRECTOR_URL")) opt.job.director_url = url;
  if (const char* key = std::getenv("C3V_DIRECTOR_KEY")) opt.job.director_key = key;
}

void status_line(int exit_code, const std::string& stage, const std::string& error) {
  nlohmann::json status{{"exit", exit_code}, {"stage", stage}};
  if (!error.empty()) status["error"] = error;
  std::cerr << "C3V_STATUS " << status.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"c3v: compositional splat video synthesis"};
  app.require_subcommand(1);

  CliOptions opt;
  CLI::App* cmd_plan = app.add_subcommand("plan", "Query the director for trajectories");
  CLI::App* cmd_lift = app.add_subcommand("lift", "Lift planned trajectories into 3D");
  CLI::App* cmd_refine = app.add_subcommand("refine", "Optimize placement parameters");
  CLI::App* cmd_render = app.add_subcommand("render", "Render the frame sequence");
  CLI::App* cmd_compose = app.add_subcommand("compose", "Run all stages with caching");
  CLI::App* cmd_validate = app.add_subcommand("validate", "Check the manifest and assets");
  for (CLI::App* cmd : {cmd_plan, cmd_lift, cmd_refine, cmd_render, cmd_compose,
                        cmd_validate}) {
    apply_common(cmd, opt);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    // CLI11 returns 0 for --help; anything else is a usage error.
    if (code == 0) return 0;
    status_line(2, "cli", "argument parsing failed");
    return 2;
  }

  std::string stage = app.get_subcommands().front()->get_name();
  try {
    finalize(opt);
    c3v::JobRunner runner(opt.job);
    if (stage == "plan") runner.plan();
    else if (stage == "lift") runner.lift();
    else if (stage == "refine") runner.refine();
    else if (stage == "render") runner.render();
    else if (stage == "compose") runner.compose();
    else if (stage == "validate") runner.validate();
    status_line(0, stage, "");
    return 0;
  } catch (const c3v::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    status_line(e.exit_code(), stage, e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    status_line(1, stage, e.what());
    return 1;
  }
}
