#include <benchmark/benchmark.h>

#include "linkfold/design.hpp"
#include "linkfold/finger.hpp"
#include "linkfold/io.hpp"
#include "linkfold/mechanism.hpp"
#include "linkfold/optics.hpp"
#include "linkfold/perception.hpp"
#include "linkfold/studio.hpp"

using namespace linkfold;

namespace {

const io::ProjectFile& ref() {
  static const io::ProjectFile p = io::reference_project();
  return p;
}

perception::RenderOptions render_options() {
  perception::RenderOptions o;
  o.scene = ref().scene;
  return o;
}

void BM_SolveActuated(benchmark::State& state) {
  const auto& f = ref().finger;
  double a = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(finger::solve_actuated(f, 10 + a, 20));
    a = a > 30 ? 0 : a + 0.01;
  }
}
BENCHMARK(BM_SolveActuated);

void BM_SolveWarm(benchmark::State& state) {
  const auto& f = ref().finger;
  auto prev = finger::solve_actuated(f, 10, 20);
  double a = 10;
  for (auto _ : state) {
    a = a > 40 ? 10 : a + 0.01;
    prev = finger::solve_actuated(f, a, 20, &prev.state);
    benchmark::DoNotOptimize(prev);
  }
}
BENCHMARK(BM_SolveWarm);

void BM_KinematicDerivatives(benchmark::State& state) {
  const auto& f = ref().finger;
  const auto sol = finger::solve_actuated(f, 25, 30);
  const mech::DriverValues rates{{finger::kActuator, 1.0}, {finger::kDip, 0.0}};
  for (auto _ : state) benchmark::DoNotOptimize(mech::kinematic_derivatives(f.mechanism, sol.state, rates));
}
BENCHMARK(BM_KinematicDerivatives);

void BM_ActuatorSweep(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(io::actuator_sweep(ref().finger, 0.5));
}
BENCHMARK(BM_ActuatorSweep)->Unit(benchmark::kMillisecond);

void BM_TraceRay(benchmark::State& state) {
  const auto scene = optics::build_scene(ref().finger, ref().scene, 40, 60);
  int px = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(optics::trace_ray(scene, px));
    px = (px + 7) % scene.camera.pixels;
  }
}
BENCHMARK(BM_TraceRay);

void BM_Visibility(benchmark::State& state) {
  const auto scene = optics::build_scene(ref().finger, ref().scene, 40, 60);
  for (auto _ : state) benchmark::DoNotOptimize(optics::visibility(scene, 1));
}
BENCHMARK(BM_Visibility)->Unit(benchmark::kMicrosecond);

void BM_CoverageGrid(benchmark::State& state) {
  const auto grid = optics::square_grid(ref().finger, static_cast<double>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(optics::coverage_sweep(ref().finger, ref().scene, grid));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * grid.size()));
}
BENCHMARK(BM_CoverageGrid)->Arg(15)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_SynthRender(benchmark::State& state) {
  const auto o = render_options();
  for (auto _ : state) benchmark::DoNotOptimize(perception::synth_render(ref().finger, 35, 50, {}, o));
}
BENCHMARK(BM_SynthRender)->Unit(benchmark::kMillisecond);

void BM_ExtractFeatures(benchmark::State& state) {
  const auto img = perception::synth_render(ref().finger, 35, 50, {}, render_options());
  for (auto _ : state) benchmark::DoNotOptimize(perception::extract_features(img));
}
BENCHMARK(BM_ExtractFeatures)->Unit(benchmark::kMillisecond);

void BM_EstimateLookup(benchmark::State& state) {
  static const auto table = perception::build_calibration(ref().finger, 6.0, render_options());
  const auto v = perception::extract_features(perception::synth_render(ref().finger, 35, 50, {}, render_options()))
                     .vertex_vector();
  for (auto _ : state) benchmark::DoNotOptimize(perception::estimate_joint_angles(table, v));
}
BENCHMARK(BM_EstimateLookup)->Unit(benchmark::kMicrosecond);

void BM_DifferenceImage(benchmark::State& state) {
  const auto o = render_options();
  const auto base = perception::synth_render(ref().finger, 35, 50, {}, o);
  const auto pressed = perception::synth_render(ref().finger, 35, 50, {{1, 0.5, 3.0, 50.0}}, o);
  for (auto _ : state) benchmark::DoNotOptimize(perception::difference_image(pressed, base));
}
BENCHMARK(BM_DifferenceImage)->Unit(benchmark::kMillisecond);

void BM_Grasp(benchmark::State& state) {
  const auto obj = finger::GraspObject::circle({24, 35}, 35);
  for (auto _ : state) benchmark::DoNotOptimize(finger::simulate_grasp(ref().finger, obj, {500.0, 0.25}));
}
BENCHMARK(BM_Grasp)->Unit(benchmark::kMillisecond);

void BM_LinkageEvaluation(benchmark::State& state) {
  auto space = *ref().linkage_space;
  space.base = ref().finger;
  for (auto _ : state)
    benchmark::DoNotOptimize(
        design::evaluate_linkage(space, *space.start, space.search_step_deg, space.search_row_deg));
}
BENCHMARK(BM_LinkageEvaluation)->Unit(benchmark::kMillisecond);

void BM_ServiceCoverageQuery(benchmark::State& state) {
  studio::Service service;
  service.create_session(ref());
  const studio::Request req{"GET", "/coverage", {{"config", "40,60"}}, ""};
  for (auto _ : state) benchmark::DoNotOptimize(service.handle(req));
}
BENCHMARK(BM_ServiceCoverageQuery)->Unit(benchmark::kMicrosecond);

void BM_ServiceRenderQuery(benchmark::State& state) {
  studio::Service service;
  service.create_session(ref());
  const studio::Request req{"GET", "/render", {{"config", "40,60"}}, ""};
  for (auto _ : state) benchmark::DoNotOptimize(service.handle(req));
}
BENCHMARK(BM_ServiceRenderQuery)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
