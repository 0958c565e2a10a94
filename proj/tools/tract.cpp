#include <cstdio>

int main() {
  std::puts("tract cli placeholder");
  return 0;
}
