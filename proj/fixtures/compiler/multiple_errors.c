#include <stdio.h>

static int twice(int x) { return x * 2 }

int main(void) {
  int y = twice(undeclared);
  printf("%d\n", y);
  return 0;
}
