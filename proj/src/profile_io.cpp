#include "railmatch/profile_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace railmatch {

void write_profile_csv(const Profile& p, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "x_mm,y_mm\n";
    char buf[80];
    for (const auto& pt : p.points) {
        std::snprintf(buf, sizeof(buf), "%.9f,%.9f\n", pt.x, pt.y);
        f << buf;
    }
    if (!f) throw std::runtime_error("write failed: " + path);

    nlohmann::json side;
    side["kind"] = to_string(p.kind);
    side["closed"] = p.closed;
    side["working_edge"] = p.working_edge == WorkingEdge::Left ? "left" : "right";
    std::ofstream sf(path + ".json");
    if (!sf) throw std::runtime_error("cannot open for writing: " + path + ".json");
    sf << side.dump(2) << "\n";
}

Profile read_profile_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open profile: " + path);
    Profile p;
    std::string line;
    if (!std::getline(f, line) || line.rfind("x_mm,y_mm", 0) != 0)
        throw std::runtime_error("bad profile header in " + path);
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw std::runtime_error("malformed CSV row in " + path + ": " + line);
        p.points.push_back({std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
    }

    std::ifstream sf(path + ".json");
    if (sf) {
        nlohmann::json side;
        sf >> side;
        p.kind = profile_kind_from_string(side.value("kind", "typical"));
        p.closed = side.value("closed", false);
        p.working_edge = side.value("working_edge", "left") == "right" ? WorkingEdge::Right
                                                                       : WorkingEdge::Left;
    }
    validate(p);
    return p;
}

} // namespace railmatch
