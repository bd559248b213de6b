package checkdigit

var dammTable = [10][10]int{
	{0, 3, 1, 7, 5, 9, 8, 6, 4, 2},
	{7, 0, 9, 2, 1, 5, 4, 8, 6, 3},
	{4, 2, 0, 6, 8, 7, 1, 3, 5, 9},
	{1, 7, 5, 0, 9, 8, 3, 4, 2, 6},
	{6, 1, 2, 3, 0, 4, 5, 9, 7, 8},
	{3, 6, 7, 4, 2, 0, 9, 5, 8, 1},
	{5, 8, 6, 9, 7, 2, 0, 1, 3, 4},
	{8, 9, 4, 5, 3, 6, 2, 0, 1, 7},
	{9, 4, 3, 8, 6, 1, 7, 2, 0, 5},
	{2, 5, 8, 1, 4, 3, 6, 7, 9, 0},
}

func (d *damm) Verify(code string) bool {
	if len(code) < 2 {
		return false
	}
	c, err := d.Generate(code[:len(code)-1])
	return err == nil && c == int(code[len(code)-1]-'0')
}

func (d *damm) Generate(seed string) (int, error) {
	if !isNumber(seed) {
		return 0, ErrInvalidArgument
	}
	interim := 0
	for _, r := range seed {
		interim = dammTable[interim][int(r-'0')]
	}
	return interim, nil
}
