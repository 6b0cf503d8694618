#include <cstdio>
int main() { std::puts("fusionlasso"); return 0; }
