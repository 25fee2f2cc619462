#include "fixtures.hpp"

#include <iostream>

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: make_fixture <dir>\n";
        return 2;
    }
    const auto f = gsedit::testing::write_project(argv[1]);
    std::cout << f.dir.string() << '\n';
}
