#include "spherediff/cli.hpp"

#include "spherediff/config.hpp"
#include "spherediff/erp.hpp"
#include "spherediff/evalkit.hpp"
#include "spherediff/fusion.hpp"
#include "spherediff/geometry.hpp"
#include "spherediff/image_io.hpp"
#include "spherediff/remote.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

namespace spherediff {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

namespace {

class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ImageIoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

// Flags that override config keys, applied after any --config file.
struct ConfigFlags {
    std::optional<std::string> config_path;
    std::map<std::string, std::string> values;
    std::vector<std::pair<std::string, std::string>> flags = {
        {"--n", "n"},           {"--channels", "channels"}, {"--steps", "steps"},
        {"--fov", "fov"},       {"--overlap", "overlap"},   {"--tau", "tau"},
        {"--seed", "seed"},     {"--sampling", "sampling"}, {"--rings", "rings"},
        {"--refine-noise", "refine_noise"}, {"--erp-height", "erp_height"}, {"--threads", "threads"},
    };

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "key = value configuration file");
        for (const auto& [flag, key] : flags) {
            app->add_option_function<std::string>(
                flag, [this, key = key](const std::string& v) { values[key] = v; }, "overrides config key '" + key + "'");
        }
    }

    RunConfig resolve() const {
        RunConfig cfg = config_path ? load_config(*config_path) : RunConfig{};
        for (const auto& [key, value] : values) apply_setting(cfg, key, value);
        validate_config(cfg);
        return cfg;
    }
};

std::string schedule_text(const std::vector<ViewSpec>& views) {
    std::ostringstream os;
    for (std::size_t i = 0; i < views.size(); ++i) {
        const auto& v = views[i];
        os << i << " azimuth=" << fmt(v.azimuth_deg) << " elevation=" << fmt(v.elevation_deg)
           << " fov=" << fmt(v.camera.fov_deg())
           << " kernel=" << (v.kernel.kind == WeightKernel::Kind::beta ? "beta" : "exponential")
           << " prompt=" << v.prompt.to_string() << "\n";
    }
    return os.str();
}

DenoiserHandle make_denoiser(const std::string& kind, const std::optional<std::string>& endpoint) {
    if (kind == "identity") return std::make_shared<IdentityDenoiser>();
    if (kind == "analytic") return std::make_shared<AnalyticDenoiser>();
    if (kind == "scheduler") return std::make_shared<SchedulerDenoiser>();
    if (kind == "remote") {
        std::string spec;
        if (endpoint) {
            spec = *endpoint;
        } else if (const char* env = std::getenv(kEndpointEnvVar)) {
            spec = env;
        } else {
            throw UsageError(std::string("--denoiser remote needs --endpoint or ") + kEndpointEnvVar);
        }
        return std::make_shared<RemoteDenoiser>(Endpoint::parse(spec));
    }
    throw UsageError("unknown denoiser '" + kind + "'");
}

Raster latents_raster(const SphericalLatentSet& s) {
    Raster r(s.size(), 1, s.channels());
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto row = s.features().row(i);
        for (std::size_t c = 0; c < s.channels(); ++c) r.at(i, 0, c) = static_cast<float>(row[c]);
    }
    return r;
}

struct GenerateArgs {
    ConfigFlags config;
    std::string denoiser = "scheduler";
    std::optional<std::string> endpoint;
    std::string out_dir = "out";
    std::string format = "png";
    std::optional<std::string> manifest;
};

int run_generate(const GenerateArgs& args, std::ostream& out) {
    RunConfig cfg;
    std::string denoiser_kind = args.denoiser;
    std::optional<std::string> endpoint = args.endpoint;
    std::string format = args.format;
    if (args.manifest) {
        const auto m = json::parse(read_file(*args.manifest));
        cfg = parse_config(m.at("config").get<std::string>());
        denoiser_kind = m.at("denoiser").get<std::string>();
        format = m.at("format").get<std::string>();
        if (!endpoint && m.contains("endpoint")) endpoint = m.at("endpoint").get<std::string>();
    } else {
        cfg = args.config.resolve();
    }
    if (format != "png" && format != "raw") throw UsageError("--format must be png or raw");
    if (cfg.pipeline.channels < 3) throw ConfigError("channels", "generate decodes the first three channels; need at least 3");

    const auto denoiser = make_denoiser(denoiser_kind, endpoint);
    const auto result = run_pipeline(cfg.pipeline, cfg.prompts, *denoiser);
    const auto composite = compose_erp(result.latents, result.views, mock_decode, cfg.pipeline.erp_height,
                                       cfg.pipeline.threads);

    const fs::path dir(args.out_dir);
    fs::create_directories(dir);
    const std::string pano_name = format == "png" ? "panorama.png" : "panorama.sdrf";
    write_raster(dir / pano_name, composite.image.raster());
    write_raw(dir / "latents.sdrf", latents_raster(result.latents));

    json m;
    m["format"] = format;
    m["config"] = format_config(cfg);
    m["seed"] = cfg.pipeline.seed;
    m["denoiser"] = denoiser_kind;
    if (denoiser_kind == "remote" && endpoint) m["endpoint"] = *endpoint;
    m["schedule_digest"] = hex64(fnv1a64(schedule_text(result.views)));
    m["views"] = result.views.size();
    json steps = json::array();
    for (const auto& st : result.steps) {
        steps.push_back({{"t", st.t},
                         {"views", st.views},
                         {"covered", st.covered},
                         {"uncovered", st.uncovered},
                         {"max_selections", st.max_selections}});
    }
    m["steps"] = steps;
    m["composite"] = {{"height", composite.image.height()}, {"holes", composite.holes}};
    json outputs = json::object();
    for (const auto& [role, name] : {std::pair<std::string, std::string>{"panorama", pano_name}, {"latents", "latents.sdrf"}}) {
        outputs[role] = {{"path", name}, {"fnv1a64", hex64(fnv1a64(read_file(dir / name)))}};
    }
    m["outputs"] = outputs;
    write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");

    out << "views=" << result.views.size() << " steps=" << result.steps.size() << " holes=" << composite.holes
        << "\n";
    for (const auto& [role, o] : outputs.items()) {
        out << role << "=" << (dir / o.at("path").get<std::string>()).string() << " fnv1a64=" << o.at("fnv1a64").get<std::string>()
            << "\n";
    }
    out << "manifest=" << (dir / "manifest.json").string() << "\n";
    return kExitOk;
}

struct ViewFlags {
    double azimuth = 0.0;
    double elevation = 0.0;
    double fov = 90.0;
    std::size_t size = 512;

    void attach(CLI::App* app, std::size_t default_size) {
        size = default_size;
        app->add_option("--az", azimuth, "camera azimuth in degrees")->capture_default_str();
        app->add_option("--el", elevation, "camera elevation in degrees (negative is up)")->capture_default_str();
        app->add_option("--fov", fov, "field of view in degrees")->capture_default_str();
        app->add_option("--size", size, "output side length in pixels")->capture_default_str()->check(CLI::PositiveNumber);
    }
};

int run_render(const std::string& in, const std::string& out_dir, bool eval_set, const ViewFlags& v,
               const std::string& ext, std::ostream& out) {
    const ERPImage img(read_raster(in));
    std::vector<std::pair<std::string, CameraModel>> cams;
    if (eval_set) {
        const auto set = evaluation_cameras(v.fov);
        for (std::size_t i = 0; i < set.size(); ++i) {
            std::ostringstream name;
            name << "eval_" << std::setw(2) << std::setfill('0') << i << ext;
            cams.emplace_back(name.str(), set[i]);
        }
    } else {
        cams.emplace_back("view" + ext, CameraModel::from_yaw_pitch(v.azimuth, v.elevation, v.fov));
    }
    fs::create_directories(out_dir);
    for (const auto& [name, cam] : cams) {
        const auto path = fs::path(out_dir) / name;
        write_raster(path, erp_to_perspective(img, cam, v.size, v.size));
        out << path.string() << "\n";
    }
    return kExitOk;
}

std::string eval_record(const std::string& path) {
    const Raster r = read_raster(path);
    std::ostringstream os;
    os << "file=" << path << " height=" << r.height() << " width=" << r.width() << " channels=" << r.channels();
    if (r.width() >= 2) {
        const auto e = end_continuity_error(r);
        os << " border=" << fmt(e.border) << " top_pole_std=" << fmt(e.top_pole_std)
           << " bottom_pole_std=" << fmt(e.bottom_pole_std) << " continuity=" << fmt(e.total());
    }
    os << " curvature=" << fmt(stripe_curvature(r));
    return os.str();
}

int run_eval(const std::vector<std::string>& files, unsigned threads, std::ostream& out) {
    std::vector<std::string> records(files.size());
    std::vector<std::string> errors(files.size());
    if (threads == 0) threads = std::max(1U, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, files.size()));
    std::atomic<std::size_t> next{0};
    const auto work = [&] {
        for (std::size_t i = next++; i < files.size(); i = next++) {
            try {
                records[i] = eval_record(files[i]);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    for (std::size_t i = 0; i < files.size(); ++i) {
        if (!errors[i].empty()) throw ImageIoError(files[i] + ": " + errors[i]);
        out << records[i] << "\n";
    }
    return kExitOk;
}

int run_serve(const std::string& listen, const std::string& backend_kind, std::ostream& out) {
    DenoiserHandle backend;
    if (backend_kind == "echo") {
        backend = std::make_shared<IdentityDenoiser>();
    } else if (backend_kind == "scheduler") {
        backend = std::make_shared<SchedulerDenoiser>();
    } else if (backend_kind == "analytic") {
        backend = std::make_shared<AnalyticDenoiser>();
    } else {
        throw UsageError("unknown backend '" + backend_kind + "'");
    }
    if (listen == "stdio") {
        wire::FdStream stream(0, 1, false);
        serve_session(stream, *backend);
        return kExitOk;
    }
    const auto ep = Endpoint::parse(listen);
    if (ep.kind != Endpoint::Kind::tcp || (ep.host != "127.0.0.1" && ep.host != "localhost")) {
        throw UsageError("--listen must be stdio or tcp://127.0.0.1:<port>");
    }
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    LoopbackServer server(backend, ep.port);
    out << "listening " << server.endpoint().to_string() << std::endl;
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
    return kExitOk;
}

void print_exception(std::ostream& err, const std::exception& e, int depth = 0) {
    err << (depth == 0 ? "error: " : "  caused by: ") << e.what() << "\n";
    try {
        std::rethrow_if_nested(e);
    } catch (const std::exception& inner) {
        print_exception(err, inner, depth + 1);
    } catch (...) {
    }
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Spherical latent panorama generation toolkit", "spherediff"};
    app.require_subcommand(1);

    // lattice
    auto* lattice = app.add_subcommand("lattice", "Fibonacci lattice directions and uniformity report");
    std::size_t lattice_n = 2600;
    double cap_deg = 40.0;
    std::optional<std::string> lattice_out;
    lattice->add_option("--n", lattice_n, "number of directions")->capture_default_str()->check(CLI::PositiveNumber);
    lattice->add_option("--cap-deg", cap_deg, "cap half-angle in degrees")->capture_default_str();
    lattice->add_option("--out", lattice_out, "write directions as 'x y z' lines");

    // schedule
    auto* schedule = app.add_subcommand("schedule", "Print the view schedule, one view per line");
    ConfigFlags schedule_cfg;
    schedule_cfg.attach(schedule);

    // generate
    auto* generate = app.add_subcommand("generate", "Run the pipeline and write an ERP, latents and a manifest");
    GenerateArgs gen;
    gen.config.attach(generate);
    generate->add_option("--denoiser", gen.denoiser, "identity|analytic|scheduler|remote")
        ->capture_default_str()
        ->check(CLI::IsMember({"identity", "analytic", "scheduler", "remote"}));
    generate->add_option("--endpoint", gen.endpoint,
                         std::string("remote endpoint (default: $") + kEndpointEnvVar + ")");
    generate->add_option("--out-dir", gen.out_dir, "output directory")->capture_default_str();
    generate->add_option("--format", gen.format, "panorama format")
        ->capture_default_str()
        ->check(CLI::IsMember({"png", "raw"}));
    generate->add_option("--manifest", gen.manifest, "re-run the configuration recorded in a manifest");

    // render
    auto* render = app.add_subcommand("render", "Render perspective views from an ERP");
    std::string render_in, render_out = "views", render_format = "png";
    bool eval_set = false;
    ViewFlags render_view;
    render->add_option("--in", render_in, "input ERP (.png or raw)")->required();
    render->add_option("--out-dir", render_out, "output directory")->capture_default_str();
    render->add_flag("--eval-set", eval_set, "render the 14-view evaluation set");
    render->add_option("--format", render_format, "output format")
        ->capture_default_str()
        ->check(CLI::IsMember({"png", "raw"}));
    render_view.attach(render, 512);

    // degrade
    auto* degrade = app.add_subcommand("degrade", "Apply a synthetic degradation");
    std::string degrade_in, degrade_out, degrade_kind;
    double degrade_level = 0.0;
    ViewFlags degrade_view;
    degrade->add_option("--in", degrade_in, "input raster")->required();
    degrade->add_option("--out", degrade_out, "output raster")->required();
    degrade->add_option("--kind", degrade_kind, "discontinuity|distortion")
        ->required()
        ->check(CLI::IsMember({"discontinuity", "distortion"}));
    degrade->add_option("--level", degrade_level, "shift in pixels or elevation shift in degrees")->required();
    degrade_view.attach(degrade, 256);

    // eval
    auto* eval = app.add_subcommand("eval", "Continuity and curvature metrics, one record per file");
    std::vector<std::string> eval_files;
    unsigned eval_threads = 1;
    eval->add_option("files", eval_files, "input rasters")->required();
    eval->add_option("--threads", eval_threads, "worker threads (0 = hardware)")->capture_default_str();

    // distortion-curve
    auto* curve = app.add_subcommand("distortion-curve", "tan(theta)/theta table");
    double curve_max = 85.0, curve_step = 5.0;
    curve->add_option("--max-deg", curve_max, "largest angle, below 90")->capture_default_str();
    curve->add_option("--step-deg", curve_step, "angle increment")->capture_default_str()->check(CLI::PositiveNumber);

    // serve
    auto* serve = app.add_subcommand("serve", "Serve a mock denoiser over the wire protocol");
    std::string serve_listen = "stdio", serve_backend = "echo";
    serve->add_option("--listen", serve_listen, "stdio or tcp://127.0.0.1:<port>")->capture_default_str();
    serve->add_option("--backend", serve_backend, "echo|scheduler|analytic")
        ->capture_default_str()
        ->check(CLI::IsMember({"echo", "scheduler", "analytic"}));

    std::vector<const char*> cargv;
    cargv.reserve(argv.size());
    for (const auto& a : argv) cargv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(cargv.size()), cargv.data());
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return kExitOk;
        }
        err << "usage error: " << e.what() << "\n" << "run with --help for usage\n";
        return kExitUsageError;
    }

    try {
        if (lattice->parsed()) {
            const auto dirs = fibonacci_lattice(lattice_n);
            if (lattice_out) {
                std::ostringstream os;
                os << std::setprecision(17);
                for (const auto& d : dirs) os << d.x() << " " << d.y() << " " << d.z() << "\n";
                write_file_atomic(*lattice_out, os.str());
            }
            out << format_report(lattice_uniformity_report(dirs, cap_deg));
            return kExitOk;
        }
        if (schedule->parsed()) {
            const auto cfg = schedule_cfg.resolve();
            out << schedule_text(generate_view_schedule(cfg.pipeline, cfg.prompts));
            return kExitOk;
        }
        if (generate->parsed()) return run_generate(gen, out);
        if (render->parsed()) {
            return run_render(render_in, render_out, eval_set, render_view, render_format == "png" ? ".png" : ".sdrf",
                              out);
        }
        if (degrade->parsed()) {
            Raster result;
            if (degrade_kind == "discontinuity") {
                if (degrade_level < 0.0 || degrade_level != std::floor(degrade_level)) {
                    throw std::invalid_argument("discontinuity level must be a whole number of pixels");
                }
                result = degrade_discontinuity(read_raster(degrade_in), static_cast<std::size_t>(degrade_level));
            } else {
                const DistortionRender view{degrade_view.azimuth, degrade_view.elevation, degrade_view.fov,
                                            degrade_view.size};
                result = degrade_distortion(ERPImage(read_raster(degrade_in)), degrade_level, view);
            }
            write_raster(degrade_out, result);
            out << degrade_out << "\n";
            return kExitOk;
        }
        if (eval->parsed()) return run_eval(eval_files, eval_threads, out);
        if (curve->parsed()) {
            if (!(curve_max >= 0.0 && curve_max < 90.0)) throw UsageError("--max-deg must lie in [0, 90)");
            out << "# theta_deg tan_over_theta\n";
            const auto count = static_cast<std::size_t>(std::floor(curve_max / curve_step + 1e-9));
            for (std::size_t i = 0; i <= count; ++i) {
                const double deg = static_cast<double>(i) * curve_step;
                out << fmt(deg) << " " << std::setprecision(17) << distortion_ratio(deg_to_rad(deg)) << "\n";
            }
            return kExitOk;
        }
        if (serve->parsed()) return run_serve(serve_listen, serve_backend, out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsageError;
    } catch (const std::exception& e) {
        print_exception(err, e);
        return kExitDomainError;
    }
    err << "usage error: no subcommand\n";
    return kExitUsageError;
}

}  // namespace spherediff
