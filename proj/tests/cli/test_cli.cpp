// SPDX-License-Identifier: Apache-2.0
// Drives the built `topopt` binary end to end.
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

#include "oracles/reference_simp.hpp"
#include "topopt/io/artifacts.hpp"
#include "topopt/io/export.hpp"

using namespace topopt;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kWork = fs::temp_directory_path() / "topopt_cli_test";

struct Run {
  int code;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Run cli(const std::string& args) {
  const auto out = kWork / "stdout.txt", err = kWork / "stderr.txt";
  const std::string cmd = std::string(TOPOPT_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::string at(const std::string& name) { return (kWork / name).string(); }

void write(const std::string& name, const std::string& text) { std::ofstream(kWork / name) << text; }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
};

}  // namespace

TEST_F(Cli, SolveCantileverMatchesReference) {
  const auto r = cli("solve --config " + std::string(TOPOPT_SOURCE_DIR) + "/configs/cantilever32.json --out " +
                     at("trace.bin") + " --vtk " + at("trace.vtk"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto summary = json::parse(r.out);
  EXPECT_NEAR(summary.at("final_vf").get<double>(), 0.5, 1e-3);

  const auto t = io::trace_from_container(io::read_container(at("trace.bin")));
  EXPECT_NEAR(t.final_density().mean(), 0.5, 1e-3);
  const auto ref = oracle::reference_simp_clamped_left(32, 32, 0.5, 3.0, 1.5, {{32, 16, 0.0, -1.0}});
  EXPECT_NEAR(t.total_compliance.back(), ref.compliance, 0.01 * ref.compliance);
  EXPECT_NE(slurp(at("trace.vtk")).find("SCALARS density"), std::string::npos);
}

TEST_F(Cli, ExportOfAllZeroDensityIsEmptyObj) {
  voxel::VoxelGrid v;
  v.resolution = {4, 4, 4};
  v.fields["density"].assign(64, 0.0);
  v.owner.assign(64, -1);
  io::write_container(at("zero.bin"), io::voxels_to_container(v));
  const auto r = cli("export --input " + at("zero.bin") + " --obj " + at("zero.obj") + " --vtk " + at("zero.vtk"));
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_TRUE(fs::exists(at("zero.obj")));
  EXPECT_EQ(fs::file_size(at("zero.obj")), 0u);
  EXPECT_EQ(json::parse(r.out).at("triangles"), 0);
}

TEST_F(Cli, GenerateTrainInferEvalExport) {
  write("gen.json", R"({"dims":[16,16],"n_samples":8,"exclusion_radius":2.0})");
  write("train.json", R"({"epochs":2,"batch_size":4,"base_channels":4,"depth":2,"lstm_hidden":8,"unroll_len":3})");
  ASSERT_EQ(cli("gen2d --config " + at("gen.json") + " --seed 4 --out " + at("ds.bin") + " --manifest " +
                at("m1.json") + " --quiet").code, 0);
  ASSERT_EQ(cli("gen2d --config " + at("gen.json") + " --seed 4 --out " + at("ds2.bin") + " --manifest " +
                at("m2.json") + " --quiet").code, 0);
  EXPECT_EQ(slurp(at("m1.json")), slurp(at("m2.json")));
  EXPECT_EQ(slurp(at("ds.bin")), slurp(at("ds2.bin")));

  for (const std::string fw : {"dod", "ds", "cdcs"}) {
    const auto r = cli("train --framework " + fw + " --dataset " + at("ds.bin") + " --config " + at("train.json") +
                       " --out " + at("b_" + fw + ".bin") + " --history " + at("h_" + fw + ".json") + " --quiet");
    ASSERT_EQ(r.code, 0) << fw << ": " << r.err;
    EXPECT_EQ(json::parse(r.out).at("framework"), fw);

    const auto inf = cli("infer --bundle " + at("b_" + fw + ".bin") + " --dataset " + at("ds.bin") +
                         " --sample 0 --out " + at("p_" + fw + ".bin"));
    ASSERT_EQ(inf.code, 0) << fw << ": " << inf.err;
    const auto pred = io::read_container(at("p_" + fw + ".bin"));
    EXPECT_EQ(pred.kind, "prediction");
    if (fw == "cdcs") EXPECT_EQ(pred.meta.at("calls").size(), 11u);
    if (fw == "ds") EXPECT_EQ(pred.block("sequence").shape[0], 4);

    const auto ex = cli("export --input " + at("p_" + fw + ".bin") + " --pgm " + at("p_" + fw + ".pgm"));
    ASSERT_EQ(ex.code, 0) << ex.err;
    EXPECT_EQ(slurp(at("p_" + fw + ".pgm")).substr(0, 3), "P5\n");
  }

  const std::string eval = "eval --bundle " + at("b_dod.bin") + " --dataset " + at("ds.bin");
  ASSERT_EQ(cli(eval + " --csv " + at("e1.csv") + " --json " + at("e1.json")).code, 0);
  ASSERT_EQ(cli(eval + " --csv " + at("e2.csv")).code, 0);
  EXPECT_EQ(slurp(at("e1.csv")), slurp(at("e2.csv")));
  EXPECT_EQ(slurp(at("e1.csv")).substr(0, 17), "id,vf_pred,vf_tru");
  EXPECT_EQ(json::parse(slurp(at("e1.json"))).at("framework"), "dod");

  const auto cpn = cli(eval + " --tc cpn --cpn-bundle " + at("b_cdcs.bin"));
  EXPECT_EQ(cpn.code, 0) << cpn.err;
  const auto no_cpn = cli(eval + " --tc cpn");
  EXPECT_EQ(no_cpn.code, exit_code(ErrorKind::MissingWeights));

  const auto ex = cli("export --input " + at("ds.bin") + " --sample 0 --frame 0 --pgm " + at("s0.pgm"));
  ASSERT_EQ(ex.code, 0) << ex.err;
  const auto first = io::read_pgm16(at("s0.pgm"));
  for (double v : first.values) EXPECT_NEAR(v, first.values.front(), 1e-12);  // uniform start design
}

TEST_F(Cli, VoxelizeWritesContainerAndVtk) {
  write("tet.txt",
        "nodes 4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\ntets 1\n0 1 2 3\nfield density\n1 1 1 1\n");
  const auto r = cli("voxelize --mesh " + at("tet.txt") + " --res 4 --out " + at("vox.bin") + " --vtk " + at("vox.vtk"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto v = io::voxels_from_container(io::read_container(at("vox.bin")));
  EXPECT_EQ(v.size(), 64u);
  std::size_t inside = 0;
  for (int o : v.owner) inside += o >= 0;
  EXPECT_EQ(json::parse(r.out).at("inside"), inside);
  EXPECT_GT(inside, 0u);
  EXPECT_LT(inside, 64u);
  const auto obj = cli("export --input " + at("vox.bin") + " --obj " + at("vox.obj"));
  EXPECT_EQ(obj.code, 0) << obj.err;
  EXPECT_GT(fs::file_size(at("vox.obj")), 0u);
}

TEST_F(Cli, ErrorsCarryMachineReadableCategory) {
  auto r = cli("export --input " + at("missing.bin") + " --pgm " + at("x.pgm"));
  EXPECT_EQ(r.code, exit_code(ErrorKind::IoError));
  EXPECT_EQ(json::parse(r.err).at("error"), "IoError");

  write("junk.bin", "not a container at all, just text");
  r = cli("export --input " + at("junk.bin") + " --pgm " + at("x.pgm"));
  EXPECT_EQ(r.code, exit_code(ErrorKind::CorruptHeader));
  EXPECT_EQ(json::parse(r.err).at("error"), "CorruptHeader");

  write("bad.json", "{ nope");
  r = cli("solve --config " + at("bad.json") + " --out " + at("y.bin"));
  EXPECT_EQ(r.code, exit_code(ErrorKind::InvalidArgument));

  write("floating.json", R"({"dims":[8,8],"target_vf":0.5,"supports":[],"loads":[{"node":[8,4],"force":[0,-1]}]})");
  r = cli("solve --config " + at("floating.json") + " --out " + at("y.bin"));
  EXPECT_EQ(r.code, exit_code(ErrorKind::InvalidArgument));

  r = cli("train --framework nope --dataset x --out y");
  EXPECT_EQ(r.code, 1);
  const auto last = r.err.substr(r.err.rfind('\n', r.err.size() - 2) + 1);
  EXPECT_EQ(json::parse(last).at("error"), "Usage");

  r = cli("");
  EXPECT_EQ(r.code, 1);
}
