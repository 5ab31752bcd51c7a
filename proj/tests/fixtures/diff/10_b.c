  int i;
z = 1;
z = 1;
x++;
#include <stdio.h>
x++;
x++;
  }
#include <stdio.h>
  int i;
#include <stdio.h>
}
int main(void) {
  for (i = 0; i < 10; i++) {
  }
int main(void) {
}

x++;
  for (i = 0; i < 10; i++) {
}
z = 1;
int main(void) {

x++;
x++;
z = 1;
  int i;
    printf("%d\n", i);

