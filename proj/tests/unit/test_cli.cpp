#include <cstdlib>
#include <filesystem>

#include "cli_pipeline.hpp"
#include "ctxalign/corpus_io.hpp"
#include "ctxalign/manifest.hpp"
#include "doctest.h"
#include "test_util.hpp"

using cli_pipeline::run;
using test_util::TempDir;

namespace {

int run_binary(const std::string& args, const std::string& out_file) {
  const std::string cmd = std::string(CTXALIGN_BINARY) + " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("cli: exit codes of the installed binary") {
  TempDir dir("cli");
  CHECK(run_binary("", dir.file("o")) == ctxalign::kExitUsage);
  CHECK(run_binary("--version", dir.file("o")) == ctxalign::kExitOk);
  CHECK(test_util::read_text(dir.file("o")) == std::string("ctxalign ") + CTXALIGN_VERSION + "\n");
  CHECK(run_binary("anchors --bogus-flag", dir.file("o")) == ctxalign::kExitUsage);
  CHECK(test_util::read_text(dir.file("o")).find("--bogus-flag") != std::string::npos);
  CHECK(run_binary("anchors --input " + dir.file("missing.ctx") + " --output " + dir.file("a.vec"), dir.file("o")) ==
        ctxalign::kExitData);
}

TEST_CASE("cli: usage errors and data errors in process") {
  TempDir dir("cli");
  CHECK(run({"no-such-command"}).code == ctxalign::kExitUsage);
  CHECK(run({"anchors"}).code == ctxalign::kExitUsage);  // --output is required
  auto bad_metric = run({"translate", "--matrix", "m", "--src-anchors", "a", "--tgt-anchors", "b", "--metric", "x"});
  CHECK(bad_metric.code == ctxalign::kExitUsage);
  test_util::write_text(dir.file("bad.vec"), "2 3\na 1 0 0\nb 0 1\n");
  auto parse = run({"anchors", "--input", dir.file("bad.vec"), "--output", dir.file("o.vec")});
  CHECK(parse.code == ctxalign::kExitData);
  CHECK(parse.err.find("error") != std::string::npos);
  auto help = run({"--help"});
  CHECK(help.code == ctxalign::kExitOk);
  CHECK(help.out.find("align-supervised") != std::string::npos);
}

TEST_CASE("cli: manifests record inputs, outputs and configuration") {
  TempDir dir("cli");
  REQUIRE(run({"--seed", "3", "synth", "--kind", "rotated-anchors", "--out-dir", dir.file("rot"), "--dim", "6",
               "--vocab", "50"})
              .code == 0);
  auto r = run({"--threads", "1", "align-supervised", "--src-anchors", dir.file("rot/src.vec"), "--tgt-anchors",
                dir.file("rot/tgt.vec"), "--dict", dir.file("rot/dict.txt"), "--output", dir.file("w.mat")});
  REQUIRE(r.code == 0);
  auto m = ctxalign::load_manifest(dir.file("w.mat.manifest.json"));
  CHECK(m.subcommand == "align-supervised");
  CHECK(m.version == CTXALIGN_VERSION);
  CHECK(m.threads == 1);
  CHECK(m.inputs.size() == 3);
  for (const auto& f : m.inputs) CHECK(f.sha256 == ctxalign::sha256_file(f.path));
  REQUIRE(m.outputs.size() == 1);
  CHECK(m.outputs[0].sha256 == ctxalign::sha256_file(dir.file("w.mat")));
  CHECK(ctxalign::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");

  auto synth_manifest = ctxalign::load_manifest(dir.file("rot/synth.manifest.json"));
  CHECK(synth_manifest.seed == 3);
  CHECK(synth_manifest.outputs.size() == 4);
}

TEST_CASE("cli: replay notices a modified input") {
  TempDir dir("cli");
  REQUIRE(run({"synth", "--kind", "rotated-anchors", "--out-dir", dir.file("rot"), "--dim", "4", "--vocab", "30"})
              .code == 0);
  REQUIRE(run({"align-supervised", "--src-anchors", dir.file("rot/src.vec"), "--tgt-anchors", dir.file("rot/tgt.vec"),
               "--dict", dir.file("rot/dict.txt"), "--output", dir.file("w.mat")})
              .code == 0);
  CHECK(run({"replay", dir.file("w.mat.manifest.json"), "--out-dir", dir.file("re")}).code == 0);
  test_util::write_text(dir.file("rot/dict.txt"), "s0\tt0\ns1\tt1\ns2\tt2\ns3\tt3\n");
  CHECK(run({"replay", dir.file("w.mat.manifest.json"), "--out-dir", dir.file("re2")}).code == ctxalign::kExitData);
}

TEST_CASE("cli: every subcommand is bit-reproducible through replay") {
  TempDir dir("cli");
  for (const auto& o : cli_pipeline::run_and_replay(dir.path().string())) {
    INFO(o.name << ": " << o.detail);
    CHECK(o.exit_code == 0);
    CHECK(o.replay_exit_code == 0);
    CHECK(o.reproduced);
  }
}

TEST_CASE("cli: embed --center-by subtracts the anchor mean") {
  TempDir dir("cli");
  REQUIRE(run({"synth", "--kind", "toy-corpus", "--out-dir", dir.file("tc"), "--sentences", "15"}).code == 0);
  REQUIRE(run({"train-lm", "--corpus", dir.file("tc/corpus.txt"), "--emb-dim", "4", "--hidden", "4", "--epochs", "1",
               "--output", dir.file("lm.bin")})
              .code == 0);
  REQUIRE(run({"anchors", "--model", dir.file("lm.bin"), "--corpus", dir.file("tc/corpus.txt"), "--output",
               dir.file("a.vec")})
              .code == 0);
  REQUIRE(run({"embed", "--model", dir.file("lm.bin"), "--corpus", dir.file("tc/corpus.txt"), "--output",
               dir.file("raw.ctx")})
              .code == 0);
  REQUIRE(run({"embed", "--model", dir.file("lm.bin"), "--corpus", dir.file("tc/corpus.txt"), "--center-by",
               dir.file("a.vec"), "--output", dir.file("centered.ctx")})
              .code == 0);
  auto table = ctxalign::load_static_embeddings(dir.file("a.vec"), "a");
  ctxalign::RowVector mean = table.vectors().colwise().mean();
  auto raw = ctxalign::load_occurrences(dir.file("raw.ctx"));
  auto centered = ctxalign::load_occurrences(dir.file("centered.ctx"));
  REQUIRE(raw.size() == centered.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    CHECK(centered[i].token == raw[i].token);
    CHECK((centered[i].vector.transpose() - (raw[i].vector.transpose() - mean)).norm() < 1e-12);
  }
  auto bad = run({"embed", "--model", dir.file("lm.bin"), "--corpus", dir.file("tc/corpus.txt"), "--layer", "0",
                  "--center-by", dir.file("a.vec"), "--output", dir.file("x.ctx")});
  CHECK(bad.code == ctxalign::kExitData);
}
