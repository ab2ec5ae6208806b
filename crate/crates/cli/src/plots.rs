//! Gnuplot scripts written next to the CSV outputs.

pub const PROFILE: &str = r#"set datafile separator ','
set key autotitle columnhead
set xlabel 'bin offset'
set ylabel 'mean |T(i, i-k)|'
set logscale y
plot 'profile.csv' using 1:2 with impulses lw 2 notitle
pause -1
"#;

pub const FEATURES: &str = r#"set datafile separator ','
set xlabel 'O1'
set ylabel 'O2'
set zlabel 'O3'
splot 'features.csv' using 2:3:4 every ::1 with points pt 7 title 'feature vectors', \
      ''             using 2:3:4:(sprintf('%d', $1)) every ::1 with labels offset 1,1 notitle
pause -1
"#;

pub const SCATTER: &str = r#"set datafile separator ','
set xlabel 'O1'
set ylabel 'O2'
set zlabel 'O3'
label(s) = s eq 'observed' ? 1 : s eq 'thermal' ? 2 : s eq 'squashed' ? 3 : s eq 'coherent' ? 4 : s eq 'smsv' ? 5 : s eq 'distinguishable' ? 6 : 7
splot 'orbits.csv' using 3:4:5:(label(stringcolumn(1))) every ::1 with points pt 7 lc variable notitle
pause -1
"#;

pub const COVARIANCE: &str = r#"set datafile separator ','
set xlabel 'mode i'
set ylabel 'mode j'
set size square
set palette defined (-1 'blue', 0 'white', 1 'red')
files = system('ls covariance_*.csv')
do for [f in files] {
    set title f noenhanced
    plot f using 1:2:3 every ::1 with image notitle
    pause -1
}
"#;
