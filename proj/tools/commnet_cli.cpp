#include <cstdio>

int main() {
  std::puts("commnet cli placeholder");
  return 0;
}
