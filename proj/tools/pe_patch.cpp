// pe-patch: apply header edits and a printable-distribution append to a PE file.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "xea/pefile.hpp"

namespace pe = xea::pe;

int main(int argc, char** argv) {
  CLI::App app{"Patch a PE32/PE32+ file with loader-inert edits"};
  std::string in_path, out_path, section_name = ".xdata", target_path;
  std::optional<std::uint32_t> timedate, clr_size, clr_va;
  bool overlay = false;
  app.add_option("in", in_path, "input PE file")->required();
  app.add_option("out", out_path, "output path")->required();
  app.add_option("--timedate", timedate, "new COFF TimeDateStamp");
  app.add_option("--clr-size", clr_size, "CLR directory size");
  app.add_option("--clr-va", clr_va, "CLR directory virtual address");
  app.add_option("--section-name", section_name, "name of the appended section (max 8 bytes)");
  app.add_option("--target-dist", target_path, "96 comma-separated printable frequencies (0x20..0x7F)");
  app.add_flag("--overlay", overlay, "append the printable buffer as overlay instead of a section");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto img = pe::parse(pe::read_file(in_path));
    pe::PatchPlan plan;
    if (timedate) plan.edits.push_back({pe::EditKind::timedate_stamp, *timedate, {}, std::nullopt});
    if (clr_size) plan.edits.push_back({pe::EditKind::clr_size, *clr_size, {}, std::nullopt});
    if (clr_va) plan.edits.push_back({pe::EditKind::clr_virtual_address, *clr_va, {}, std::nullopt});
    std::optional<pe::CharDistributionTarget> target;
    if (!target_path.empty()) {
      std::ifstream t(target_path);
      if (!t) throw xea::IoError("cannot open target distribution '" + target_path + "'");
      std::stringstream ss;
      ss << t.rdbuf();
      target = pe::parse_target(ss.str());
      const auto kind = overlay ? pe::EditKind::append_overlay : pe::EditKind::append_printable_section;
      plan.edits.push_back({kind, 0, section_name, target});
    } else if (overlay) {
      throw xea::ArgumentError("--overlay needs --target-dist");
    }
    const auto out = pe::apply_plan(img, plan);
    pe::write_file(out_path, out.bytes());
    const auto dist = pe::printable_distribution(pe::count_printable(out.bytes()));
    std::printf("%s: %zu -> %zu bytes, %zu sections", out_path.c_str(), img.bytes().size(), out.bytes().size(),
                out.n_sections());
    if (target) std::printf(", printable L1 %.6f", pe::l1_distance(dist, target->histogram));
    std::printf("\n");
  } catch (const pe::ParseError& e) {
    std::fprintf(stderr, "pe-patch: parse error (%s): %s\n", std::string(pe::to_string(e.code())).c_str(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "pe-patch: %s\n", e.what());
    return 1;
  }
  return 0;
}
