#include "snet/objective.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "snet/wav.hpp"

namespace fs = std::filesystem;

namespace snet {

namespace {

double clamp_db(double v) { return std::min(kSdrClampDb, std::max(-kSdrClampDb, v)); }

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

double si_sdr_db(const std::vector<double>& est, const std::vector<double>& ref) {
    if (est.size() != ref.size()) throw DataError("si_sdr: length mismatch");
    const double ref_e = dot(ref, ref);
    if (ref_e <= 0.0) throw DataError("si_sdr: zero reference");
    const double alpha = dot(est, ref) / ref_e;
    double num = alpha * alpha * ref_e;
    double den = 0.0;
    for (size_t i = 0; i < est.size(); ++i) {
        const double e = alpha * ref[i] - est[i];
        den += e * e;
    }
    if (den <= 0.0) return kSdrClampDb;
    if (num <= 0.0) return -kSdrClampDb;
    return clamp_db(10.0 * std::log10(num / den));
}

double sdr_db(const std::vector<double>& est, const std::vector<double>& ref) {
    if (est.size() != ref.size()) throw DataError("sdr: length mismatch");
    const double num = dot(ref, ref);
    if (num <= 0.0) throw DataError("sdr: zero reference");
    double den = 0.0;
    for (size_t i = 0; i < est.size(); ++i) {
        const double e = ref[i] - est[i];
        den += e * e;
    }
    if (den <= 0.0) return kSdrClampDb;
    return clamp_db(10.0 * std::log10(num / den));
}

double sa_sdr_db(const std::vector<std::vector<double>>& ests,
                 const std::vector<std::vector<double>>& refs) {
    if (ests.size() != refs.size() || ests.empty()) throw DataError("sa_sdr: size mismatch");
    double num = 0.0, den = 0.0;
    for (size_t p = 0; p < ests.size(); ++p) {
        if (ests[p].size() != refs[p].size()) throw DataError("sa_sdr: length mismatch");
        for (size_t i = 0; i < refs[p].size(); ++i) {
            num += refs[p][i] * refs[p][i];
            const double e = refs[p][i] - ests[p][i];
            den += e * e;
        }
    }
    if (num <= 0.0) throw DataError("sa_sdr: all-zero references");
    if (den <= 0.0) return kSdrClampDb;
    return clamp_db(10.0 * std::log10(num / den));
}

std::vector<std::vector<int>> permutations(int p) {
    std::vector<int> idx(p);
    for (int i = 0; i < p; ++i) idx[i] = i;
    std::vector<std::vector<int>> out;
    do {
        out.push_back(idx);
    } while (std::next_permutation(idx.begin(), idx.end()));
    return out;
}

PitResult pit(const std::vector<std::vector<double>>& ests,
              const std::vector<std::vector<double>>& refs, const std::string& metric) {
    const int P = static_cast<int>(ests.size());
    if (P < 1 || static_cast<int>(refs.size()) != P) throw DataError("pit: size mismatch");
    if (P > 4) throw DataError("pit: exhaustive search limited to 4 sources");

    PitResult best;
    best.value = -1e300;
    if (metric == "sa_sdr") {
        for (const auto& perm : permutations(P)) {
            std::vector<std::vector<double>> pr(P);
            for (int p = 0; p < P; ++p) pr[p] = refs[perm[p]];
            const double v = sa_sdr_db(ests, pr);
            if (v > best.value) {
                best.value = v;
                best.perm = perm;
            }
        }
    } else {
        // pairwise table, then best assignment by mean
        std::vector<std::vector<double>> table(P, std::vector<double>(P));
        for (int p = 0; p < P; ++p)
            for (int q = 0; q < P; ++q)
                table[p][q] = metric == "sdr" ? sdr_db(ests[p], refs[q])
                                              : si_sdr_db(ests[p], refs[q]);
        for (const auto& perm : permutations(P)) {
            double v = 0;
            for (int p = 0; p < P; ++p) v += table[p][perm[p]];
            v /= P;
            if (v > best.value) {
                best.value = v;
                best.perm = perm;
            }
        }
    }
    best.loss = -best.value;
    return best;
}

nlohmann::json TrainConfig::to_json() const {
    return {{"batch", batch},
            {"utt_seconds", utt_seconds},
            {"lr0", lr0},
            {"lr_decay", lr_decay},
            {"grad_clip", grad_clip},
            {"epochs", epochs},
            {"steps_per_epoch", steps_per_epoch},
            {"seed", seed},
            {"loss", loss},
            {"save_every", save_every},
            {"win", win}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.batch = j.value("batch", c.batch);
    c.utt_seconds = j.value("utt_seconds", c.utt_seconds);
    c.lr0 = j.value("lr0", c.lr0);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.epochs = j.value("epochs", c.epochs);
    c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
    c.seed = j.value("seed", c.seed);
    c.loss = j.value("loss", c.loss);
    c.save_every = j.value("save_every", c.save_every);
    c.win = j.value("win", c.win);
    return c;
}

TrainScene load_scene(const SceneRecord& rec, const std::string& base_dir) {
    TrainScene s;
    s.mixture = read_wav((fs::path(base_dir) / rec.mixture).string());
    for (const auto& t : rec.targets) {
        Waveform w = read_wav((fs::path(base_dir) / t).string());
        s.targets.push_back(std::move(w.samples[0]));
    }
    return s;
}

Trainer::Trainer(Model<float>& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)) {
    cfg_.validate();
}

void Trainer::resume(const std::string& ckpt_path, const std::string& opt_path) {
    const Checkpoint c = load_checkpoint(ckpt_path);
    if (c.config_hash != model_.config().hash())
        throw DataError("resume: checkpoint was built from a different model config");
    checkpoint_to_store(c, model_.params());
    start_epoch_ = c.epoch + 1;
    if (!opt_path.empty() && fs::exists(opt_path)) adam_.from_checkpoint(load_checkpoint(opt_path));
}

TrainRecord Trainer::train_step(const std::vector<TrainScene>& scenes,
                                const std::vector<int>& batch_idx, int64_t step, int64_t epoch) {
    const int sr = scenes[0].mixture.sample_rate;
    const int win = cfg_.win > 0 ? cfg_.win : (sr > 12000 ? 512 : 256);
    const int64_t n_utt = static_cast<int64_t>(cfg_.utt_seconds * sr);
    const Rng root(cfg_.seed);

    Tape<float> tape;
    Rng drop_rng = root.child("dropout", static_cast<uint64_t>(step));
    Tensor<float> total_loss;
    std::vector<int> perm_first;

    for (size_t slot = 0; slot < batch_idx.size(); ++slot) {
        const TrainScene& sc = scenes[batch_idx[slot]];
        const int64_t N = sc.mixture.length();
        Rng crop_rng = root.child("crop", static_cast<uint64_t>(step * 16 + slot));
        const int64_t off = N > n_utt ? crop_rng.uniform_int(N - n_utt + 1) : 0;
        const int64_t len = std::min(n_utt, N);

        Waveform crop(sc.mixture.channels(), len, sr);
        for (int m = 0; m < sc.mixture.channels(); ++m)
            std::copy(sc.mixture.samples[m].begin() + off,
                      sc.mixture.samples[m].begin() + off + len, crop.samples[m].begin());

        // utterance-level scale: unit-std reference channel before analysis
        double var = 0.0;
        for (double v : crop.samples[0]) var += v * v;
        const double stdv = std::sqrt(var / std::max<int64_t>(1, len)) + 1e-8;
        for (int m = 0; m < crop.channels(); ++m)
            for (auto& v : crop.samples[m]) v /= stdv;

        const Spectrogram spec = stft(crop, win);
        auto x = stack_input<float>(spec);
        typename Model<float>::ForwardCtx ctx;
        ctx.tape = &tape;
        ctx.training = true;
        ctx.dropout_rng = &drop_rng;
        auto y = model_.forward(x, ctx);

        const int P = static_cast<int>(model_.config().num_speakers);
        const int64_t n_rec = (spec.T - 1) * spec.hop + win;
        std::vector<Tensor<float>> ests;
        for (int p = 0; p < P; ++p) {
            auto sp = slice_lastdim(&tape, y, 2 * p, 2);
            auto wave = istft_op(&tape, sp, win);
            ests.push_back(scale(&tape, wave, stdv));  // undo input scaling
        }
        std::vector<std::vector<double>> refs(P);
        for (int p = 0; p < P; ++p)
            refs[p].assign(sc.targets[p].begin() + off, sc.targets[p].begin() + off + n_rec);

        auto pg = pit_loss_graph(&tape, ests, refs, cfg_.loss);
        if (slot == 0) perm_first = pg.perm;
        total_loss = slot == 0 ? pg.loss : add(&tape, total_loss, pg.loss);
    }
    total_loss = scale(&tape, total_loss, 1.0 / batch_idx.size());

    const double loss_v = total_loss.item();
    if (!std::isfinite(loss_v)) {
        if (!dump_dir_.empty()) {
            fs::create_directories(dump_dir_);
            for (size_t slot = 0; slot < batch_idx.size(); ++slot)
                write_wav(dump_dir_ + sformat("/batch_utt%zu.wav", slot),
                          scenes[batch_idx[slot]].mixture);
            std::ofstream diag(dump_dir_ + "/diagnostic.json");
            diag << nlohmann::json({{"step", step},
                                    {"epoch", epoch},
                                    {"loss", "non-finite"},
                                    {"batch", batch_idx}})
                        .dump(2);
        }
        throw NumericalError(sformat("training aborted: non-finite loss at step %lld",
                                     (long long)step));
    }

    model_.params().zero_grads();
    tape.backward(total_loss);
    const double gnorm = clip_grad_norm(model_.params(), cfg_.grad_clip);
    const double lr = lr_at_epoch(cfg_.lr0, cfg_.lr_decay, epoch);
    adam_.step(model_.params(), lr);

    TrainRecord rec;
    rec.step = step;
    rec.epoch = epoch;
    rec.loss = loss_v;
    rec.lr = lr;
    rec.grad_norm = gnorm;
    return rec;
}

std::vector<TrainRecord> Trainer::run(const std::vector<TrainScene>& scenes,
                                      const std::string& out_dir,
                                      const std::function<void(const TrainRecord&)>& on_step) {
    if (scenes.empty()) throw DataError("train: empty corpus");
    for (const auto& s : scenes) {
        if (s.mixture.channels() != static_cast<int>(model_.config().num_mics))
            throw DataError("train: scene channel count does not match model");
        if (static_cast<int64_t>(s.targets.size()) != model_.config().num_speakers)
            throw DataError("train: scene target count does not match model");
    }
    const int64_t spe = cfg_.steps_per_epoch > 0
                            ? cfg_.steps_per_epoch
                            : (static_cast<int64_t>(scenes.size()) + cfg_.batch - 1) / cfg_.batch;
    const Rng root(cfg_.seed);

    std::ofstream curve;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        dump_dir_ = out_dir + "/nan_dump";
        curve.open(out_dir + "/loss_curve.jsonl", start_epoch_ > 0 ? std::ios::app : std::ios::out);
    }

    std::vector<TrainRecord> records;
    int64_t step = start_epoch_ * spe;
    for (int64_t epoch = start_epoch_; epoch < cfg_.epochs; ++epoch) {
        // stateless shuffle so resumed runs follow the same order
        std::vector<int> order(scenes.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        Rng srng = root.child("shuffle", static_cast<uint64_t>(epoch));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[srng.uniform_int(static_cast<int64_t>(i))]);

        for (int64_t s = 0; s < spe; ++s, ++step) {
            std::vector<int> batch;
            for (int b = 0; b < cfg_.batch; ++b)
                batch.push_back(order[(s * cfg_.batch + b) % order.size()]);
            TrainRecord rec = train_step(scenes, batch, step, epoch);
            records.push_back(rec);
            if (curve.is_open()) {
                curve << nlohmann::json({{"step", rec.step},
                                         {"epoch", rec.epoch},
                                         {"loss", rec.loss},
                                         {"lr", rec.lr},
                                         {"grad_norm", rec.grad_norm}})
                             .dump()
                      << "\n";
                curve.flush();
            }
            if (on_step) on_step(rec);
        }
        if (!out_dir.empty() && (epoch % cfg_.save_every == 0 || epoch == cfg_.epochs - 1)) {
            Checkpoint c = store_to_checkpoint(model_.params());
            c.config_hash = model_.config().hash();
            c.seed = cfg_.seed;
            c.epoch = epoch;
            c.step = step;
            c.config_json = model_.config().to_json().dump();
            save_checkpoint(out_dir + sformat("/ckpt_epoch_%04lld.ckpt", (long long)epoch), c);
            Checkpoint opt = adam_.to_checkpoint(model_.params());
            opt.epoch = epoch;
            save_checkpoint(out_dir + sformat("/ckpt_epoch_%04lld.opt", (long long)epoch), opt);
        }
    }
    return records;
}

}  // namespace snet
