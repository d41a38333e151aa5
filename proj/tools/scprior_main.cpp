#include <cstdio>

int main() {
    std::puts("scprior: subcommands not wired yet");
    return 0;
}
