#include <doctest.h>

#include <filesystem>

#include "helpers.hpp"
#include "luvit/llm_fusion.hpp"
#include "luvit/model.hpp"
#include "luvit/pipeline.hpp"

using namespace luvit;
using test::randn;

namespace {

FusionWeights<double> micro_fusion(const ModelConfig& cfg = test::micro_config()) {
  const Model<double> model(cfg, Stage::pretrain, 3);
  return *model.fusion();
}

Tensor<double> reverse_tokens(const Tensor<double>& x) {
  const Index b = x.dim(0), t = x.dim(1), d = x.dim(2);
  std::vector<Index> rows;
  for (Index i = 0; i < b; ++i) {
    for (Index j = t - 1; j >= 0; --j) rows.push_back(i * t + j);
  }
  return reshape(gather_rows(reshape(x, {b * t, d}), rows), x.shape());
}

std::filesystem::path temp_path(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST_CASE("lora_linear") {
  Rng rng(1);
  LoRAAdapter<double> ad = make_lora_adapter<double>(16, 20, 4, 0.5, LoRATarget::query, rng);
  CHECK(ad.rank() == 4);
  CHECK(ad.a.requires_grad());
  CHECK(ad.b.requires_grad());
  for (Index i = 0; i < ad.b.numel(); ++i) CHECK(ad.b[i] == 0.0);

  const Tensor<double> x = randn({5, 20}, 2);
  const Tensor<double> w0 = randn({16, 20}, 3);
  CHECK(test::bit_equal(fusion::lora_linear(x, w0, &ad).value(), linear(x, w0).value()));

  ad.b.mutable_value() = randn({16, 4}, 4).value();
  const Tensor<double> y = fusion::lora_linear(x, Tensor<double>::zeros({16, 20}), &ad);
  const RowMatrix<double> dense = 0.5 * (ad.b.matrix() * ad.a.matrix());
  const RowMatrix<double> expect = x.matrix() * dense.transpose();
  for (Index i = 0; i < 5; ++i) {
    for (Index j = 0; j < 16; ++j) CHECK(std::abs(y[i * 16 + j] - expect(i, j)) < 1e-5);
  }

  CHECK_THROWS_AS(make_lora_adapter<double>(32, 32, 9, 1.0, LoRATarget::value, rng), ContractError);
  CHECK_NOTHROW(make_lora_adapter<double>(32, 32, 8, 1.0, LoRATarget::value, rng));
}

TEST_CASE("full-scale LoRA adds 262,144 trainable parameters") {
  const ParamReport r = count_params(param_specs(full_scale_config(Variant::luvit), Stage::classify));
  CHECK(r.trainable.at(ParamGroup::lora) == 2 * (4096 * 16 + 16 * 4096));
  CHECK(r.trainable_fraction(ParamGroup::lora) == doctest::Approx(0.0028).epsilon(0.01));
}

TEST_CASE("llm_block_forward") {
  const ModelConfig cfg = test::micro_config();
  FusionWeights<double> w = micro_fusion(cfg);
  w.lora_q->b.mutable_value() = randn({32, 4}, 5, 0.1).value();
  const Tensor<double> h = randn({2, 5, 32}, 6);

  SUBCASE("zeroed output projections make the block the identity") {
    FusionWeights<double> z = w;
    z.block.wo = Tensor<double>::zeros({32, 32});
    z.block.down = Tensor<double>::zeros({32, 64});
    CHECK(test::bit_equal(fusion::llm_block_forward(h, z, cfg.llm).value(), h.value()));
  }
  SUBCASE("identical tokens give identical outputs") {
    Tensor<double> same = Tensor<double>::zeros({1, 3, 32});
    const Tensor<double> tok = randn({32}, 7);
    for (Index t = 0; t < 3; ++t) same.mutable_value().segment(t * 32, 32) = tok.value();
    const Tensor<double> y = fusion::llm_block_forward(same, w, cfg.llm);
    for (Index j = 0; j < 32; ++j) {
      CHECK(y[j] == doctest::Approx(y[32 + j]).epsilon(1e-12));
      CHECK(y[j] == doctest::Approx(y[64 + j]).epsilon(1e-12));
    }
  }
  SUBCASE("bidirectional attention without RoPE is permutation-equivariant") {
    const Tensor<double> y = fusion::llm_block_forward(h, w, cfg.llm);
    const Tensor<double> yr = fusion::llm_block_forward(reverse_tokens(h), w, cfg.llm);
    const Tensor<double> expect = reverse_tokens(y);
    for (Index i = 0; i < y.numel(); ++i) CHECK(std::abs(yr[i] - expect[i]) < 1e-5);
  }
  SUBCASE("causal and rope flags are live") {
    const Tensor<double> base = fusion::llm_block_forward(h, w, cfg.llm);
    LLMBlockConfig causal = cfg.llm;
    causal.causal = true;
    LLMBlockConfig rope = cfg.llm;
    rope.rope = true;
    const Tensor<double> yc = fusion::llm_block_forward(h, w, causal);
    const Tensor<double> yr = fusion::llm_block_forward(h, w, rope);
    CHECK((yc.value() - base.value()).abs().maxCoeff() > 1e-6);
    CHECK((yr.value() - base.value()).abs().maxCoeff() > 1e-6);
    // The last token sees every token, so causal masking leaves it unchanged.
    for (Index j = 0; j < 32; ++j) CHECK(yc[4 * 32 + j] == doctest::Approx(base[4 * 32 + j]).epsilon(1e-12));
  }
}

TEST_CASE("fuse_forward") {
  const ModelConfig cfg = test::micro_config();
  FusionWeights<double> w = micro_fusion(cfg);
  const Tensor<double> z = randn({2, 4, 16}, 8);
  CHECK(fusion::fuse_forward(z, w, cfg.llm).shape() == Shape{2, 4, 16});

  // Identity block, proj_out = pinv(proj_in): the composition returns its input.
  w.block.wo = Tensor<double>::zeros({32, 32});
  w.block.down = Tensor<double>::zeros({32, 64});
  w.proj_in.bias = Tensor<double>::zeros({32});
  w.proj_out.bias = Tensor<double>::zeros({16});
  const RowMatrix<double> win = w.proj_in.weight.matrix();
  const RowMatrix<double> pinv = win.completeOrthogonalDecomposition().pseudoInverse();
  w.proj_out.weight = Tensor<double>({16, 32}, Eigen::Map<const Buffer<double>>(pinv.data(), pinv.size()));
  const Tensor<double> back = fusion::fuse_forward(z, w, cfg.llm);
  for (Index i = 0; i < z.numel(); ++i) CHECK(std::abs(back[i] - z[i]) < 1e-4);
}

TEST_CASE("pretrained block dumps") {
  const LLMBlockConfig cfg = test::micro_config().llm;
  const LLMBlockWeights<double> w = fusion::random_block<double>(cfg, 0);
  const auto path = temp_path("luvit_block_roundtrip.luvt");
  save_checkpoint(fusion::block_to_checkpoint(w), path);
  const LLMBlockWeights<double> back = fusion::load_pretrained_block<double>(path, cfg);
  for (const char* name : fusion::kBlockTensorNames) {
    const Tensor<double>& t = fusion::block_tensor(back, name);
    CHECK_FALSE(t.requires_grad());
    // float storage: the double surrogate is rounded once, then round-trips exactly.
    const Tensor<double>& orig = fusion::block_tensor(w, name);
    for (Index i = 0; i < t.numel(); ++i) CHECK(t[i] == static_cast<double>(static_cast<float>(orig[i])));
  }

  Checkpoint missing = fusion::block_to_checkpoint(w);
  std::erase_if(missing.tensors, [](const CheckpointTensor& t) { return t.name == "attn.wv"; });
  save_checkpoint(missing, path);
  try {
    fusion::load_pretrained_block<double>(path, cfg);
    FAIL("expected LoadError");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("attn.wv") != std::string::npos);
  }

  Checkpoint wrong = fusion::block_to_checkpoint(w);
  for (auto& t : wrong.tensors) {
    if (t.name == "mlp.up") t.shape = {32, 64};
  }
  save_checkpoint(wrong, path);
  CHECK_THROWS_AS(fusion::load_pretrained_block<double>(path, cfg), LoadError);
  std::filesystem::remove(path);
}

TEST_CASE("init modes") {
  LLMBlockConfig cfg = test::micro_config().llm;
  const LLMBlockWeights<double> sur = fusion::random_block<double>(cfg, 1);
  CHECK(test::bit_equal(sur.wq.value(), fusion::random_block<double>(cfg, 2).wq.value()));
  cfg.init_mode = LLMInit::random_baseline;
  const LLMBlockWeights<double> a = fusion::random_block<double>(cfg, 1);
  const LLMBlockWeights<double> b = fusion::random_block<double>(cfg, 1);
  const LLMBlockWeights<double> c = fusion::random_block<double>(cfg, 2);
  CHECK(a.wq.shape() == sur.wq.shape());
  CHECK(test::bit_equal(a.wq.value(), b.wq.value()));
  CHECK_FALSE(test::bit_equal(a.wq.value(), c.wq.value()));
  CHECK_FALSE(test::bit_equal(a.wq.value(), sur.wq.value()));
}

TEST_CASE("gradients pass through the frozen block") {
  Model<double> model(test::micro_config(), Stage::pretrain, 4);
  const Tensor<double> patches = randn({2, 4, 48}, 9);
  Rng rng(5);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    backward(tape, pretrain_forward(model, patches, 0.5, rng).loss);
  }
  auto& store = model.params();
  CHECK(store.get("enc.patch_embed.weight").grad().abs().maxCoeff() > 0.0);
  CHECK(store.get("fuse.proj_in.weight").grad().abs().maxCoeff() > 0.0);
  CHECK(store.get("fuse.lora_q.A").has_grad());
  CHECK(store.get("fuse.lora_q.B").grad().abs().maxCoeff() > 0.0);
  for (const auto& p : store.entries()) {
    if (p.spec.group == ParamGroup::llm_frozen) {
      CHECK_FALSE(p.tensor.requires_grad());
      CHECK_FALSE(p.tensor.has_grad());
    }
  }
}
